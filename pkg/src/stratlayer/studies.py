"""Study drivers behind the command line.

Each driver takes a validated :class:`RunConfig` and returns a
:class:`StudyResult` holding tables (written as CSV), reports (JSON) and
states to snapshot.  Nothing here touches the file system except reading an
initial-data snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import boundary_layer as bl
from . import bulk
from .config import RunConfig
from .errors import ConfigError
from .nonlinear import compatibility_history, nonlinear_residual, picard_fixed_point, trajectory_l2
from .norms import NormParams, tau_schedule, verify_inequalities, x_norm, y_norm
from .snapshot import load_snapshot


@dataclass
class Table:
    columns: tuple
    rows: list
    description: dict = field(default_factory=dict)


@dataclass
class StudyResult:
    tables: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)  # (name, state)


def norm_params(cfg: RunConfig) -> NormParams:
    n = cfg.norms
    return NormParams(d=n.d, r=n.r, tau=n.tau, M=n.M)


def layer_dt(cfg: RunConfig, spec=None) -> float:
    """Configured step, or the automatic one shrunk so that ``T`` is a whole number of steps."""
    T = cfg.physics.T
    if cfg.physics.dt is not None:
        return cfg.physics.dt
    dt = bl.auto_dt(spec or cfg.grid, cfg.physics.dt_c)
    return T / np.ceil(T / dt * (1 - 1e-12))


def layer_init(cfg: RunConfig, spec=None) -> bl.BLState:
    spec = spec or cfg.grid
    ini = cfg.init
    if ini.profile == "zero":
        return bl.BLState.zeros(spec)
    if ini.profile == "mode":
        return bl.mode_profile_state(spec, k=(ini.kx, ini.ky), amplitude=ini.amplitude, decay=ini.decay, component=ini.component)
    if ini.profile == "random":
        return bl.random_state(spec, np.random.default_rng(ini.seed), amplitude=ini.amplitude, decay=ini.decay)
    if ini.profile == "snapshot":
        return load_snapshot(ini.path, expected=spec, kind="BLState")
    raise ConfigError(f"init.profile={ini.profile} is not a layer recipe (use zero, mode, random or snapshot)")


def bulk_init(cfg: RunConfig, eps: float | None = None) -> bulk.BulkState:
    spec, ini = cfg.grid, cfg.init
    eps = cfg.physics.eps if eps is None else eps
    if ini.profile == "zero":
        return bulk.make_bulk_state(spec, eps, np.zeros((spec.Nz,) + spec.shape_spectral, complex))
    if ini.profile == "mode":
        return bulk.mode_state(spec, eps, k=(ini.kx, ini.ky), amplitude=ini.amplitude, decay=ini.decay)
    if ini.profile == "wall-forced":
        return bulk.wall_forced_state(spec, eps, ini.amplitude)
    if ini.profile == "invariant":
        return bulk.invariant_state(spec, eps, ini.amplitude)
    if ini.profile == "snapshot":
        return load_snapshot(ini.path, expected=spec, kind="BulkState")
    raise ConfigError(f"init.profile={ini.profile} is not a channel recipe (use zero, mode, wall-forced, invariant or snapshot)")


def _times(T: float, dt: float) -> np.ndarray:
    return dt * np.arange(bl.n_steps_for(T, dt) + 1)


BULK_COLUMNS = ("t", "energy", "divergence_residual", "impermeability_residual", "sup_dz_v", "sup_dzz_w", "sup_dzz_theta")
LAYER_COLUMNS = ("t", "energy", "nodal_energy", "compatibility", "l2")


def run_linear_bulk(cfg: RunConfig) -> StudyResult:
    state = bulk_init(cfg)
    T = cfg.physics.T
    dt = cfg.physics.dt if cfg.physics.dt is not None else T / 100
    times = _times(T, dt)
    rows = []
    out = StudyResult()
    for n, t in enumerate(times):
        s = bulk.propagate(state, t)
        rep = bulk.boundary_trace_diagnostics(s)
        rows.append(
            (t, bulk.bulk_energy(s), bulk.divergence_residual(s), bulk.impermeability_residual(s))
            + tuple(rep.sup(name) for name in bulk.TRACE_NAMES)
        )
        if n % cfg.output.stride == 0 or n == len(times) - 1:
            out.snapshots.append((f"bulk_{n:06d}", s))
    out.tables["timeseries"] = Table(
        BULK_COLUMNS,
        rows,
        {
            "energy": "(1/2)(|v|^2 + |w|^2 + |theta|^2) over torus x (0,1)",
            "divergence_residual": "relative discrete divergence of (v, w/eps)",
            "impermeability_residual": "max |w| on the walls",
            "sup_*": "grid maximum of the bottom-wall trace",
        },
    )
    e = np.array([r[1] for r in rows])
    out.reports["summary"] = {
        "energy_drift_per_time": float(np.max(np.abs(e - e[0])) / max(abs(e[0]), 1e-300) / T) if e[0] else float(np.max(np.abs(e))),
        "max_divergence_residual": float(max(r[2] for r in rows)),
        "dt": dt,
    }
    return out


def _layer_rows(traj: bl.Trajectory):
    spec = traj.spec
    l2 = trajectory_l2(traj.data, spec)
    comp = compatibility_history(traj)
    return [
        (t, bl.discrete_energy(y, spec), bl.nodal_energy(y, spec), c, n)
        for t, y, c, n in zip(traj.times, traj.data, comp, l2)
    ]


_LAYER_DESCRIPTION = {
    "energy": "discrete layer energy (conserved by the semi-discrete half-line system)",
    "nodal_energy": "trapezoidal (1/2) int |v|^2 + |theta|^2",
    "compatibility": "max over modes of |int_0^L i k.v deta|",
    "l2": "discrete L2 norm over torus x (0, L)",
}


def run_linear_layer(cfg: RunConfig) -> StudyResult:
    system = "iota" if cfg.study == "iota-approx" else "half-line"
    init = layer_init(cfg)
    dt = layer_dt(cfg)
    traj = bl.run_linear_bl(init, dt, cfg.physics.T, system=system, stride=cfg.output.stride)
    out = StudyResult()
    out.tables["timeseries"] = Table(LAYER_COLUMNS, _layer_rows(traj), _LAYER_DESCRIPTION)
    summary = {"system": system, "dt": dt, "samples": len(traj)}
    if len(traj) >= 5 and system == "half-line":
        rep = bl.energy_identity_report(traj)
        summary["identity_max_residual"] = rep.max_residual
        summary["growth_constant"] = rep.growth_constant
    out.reports["summary"] = summary
    out.snapshots = [(f"layer_{i:06d}", traj.state(i)) for i in range(len(traj))]
    return out


def run_picard(cfg: RunConfig) -> StudyResult:
    init = layer_init(cfg)
    dt = layer_dt(cfg)
    nm = cfg.norms
    traj, report, schedule = picard_fixed_point(
        init, None, cfg.physics.T, nm.tol, dt, norm_params(cfg), C_d=nm.C_d, max_iter=nm.max_iter, project=cfg.physics.project
    )
    out = StudyResult()
    out.reports["contraction"] = report.as_dict()
    iter_rows = [
        (i + 1, dist, report.ratios[i - 1] if i > 0 else float("nan"), l2)
        for i, (dist, l2) in enumerate(zip(report.distances, report.l2_distances))
    ]
    out.tables["iterates"] = Table(
        ("iterate", "distance", "ratio", "l2_distance"),
        iter_rows,
        {"distance": "contraction-metric change from the previous iterate", "ratio": "distance / previous distance"},
    )
    keep = list(range(0, len(traj), cfg.output.stride))
    if keep[-1] != len(traj) - 1:
        keep.append(len(traj) - 1)
    sampled = bl.Trajectory(traj.spec, traj.times[keep], traj.data[keep])
    rows = _layer_rows(sampled)
    res = nonlinear_residual(traj)
    res_rows = [r + (res.velocity[i], res.temperature[i], float(schedule.samples[i])) for r, i in zip(rows, keep)]
    out.tables["timeseries"] = Table(
        LAYER_COLUMNS + ("residual_velocity", "residual_temperature", "tau"),
        res_rows,
        dict(_LAYER_DESCRIPTION, residual_velocity="L2 residual of the nonlinear velocity equation", tau="analyticity radius schedule"),
    )
    out.reports["summary"] = {"dt": dt, "max_residual": res.max_total, "max_compatibility": float(max(r[3] for r in rows))}
    out.snapshots = [(f"layer_{i:06d}", sampled.state(j)) for j, i in enumerate(keep)]
    return out


def run_norms(cfg: RunConfig) -> StudyResult:
    init = layer_init(cfg)
    params = norm_params(cfg)
    f = init.stacked()
    xv, yv = x_norm(f, cfg.grid, params), y_norm(f, cfg.grid, params)
    from .norms import semi_norm_table

    table = semi_norm_table(f, cfg.grid, params.d, params.M)
    schedule = tau_schedule(params.tau, cfg.norms.C_d, xv.value, params.d, cfg.physics.T)
    out = StudyResult()
    out.tables["semi_norms"] = Table(("m", "semi_norm"), [(m, float(v)) for m, v in enumerate(table)], {"semi_norm": "|f|_{d,m}"})
    out.tables["tau_schedule"] = Table(("t", "tau"), list(zip(schedule.times.tolist(), schedule.samples.tolist())))
    out.reports["norms"] = {
        "X": xv.value,
        "Y": yv.value,
        "X_last_term": xv.last_term,
        "Y_last_term": yv.last_term,
        "truncation_warning": bool(xv.truncation_warning or yv.truncation_warning),
        "T_max": schedule.T_max,
        "schedule_truncated": bool(schedule.truncated),
        "params": {"d": params.d, "r": params.r, "tau": params.tau, "M": params.M, "C_d": cfg.norms.C_d},
    }
    return out


def run_inequalities(cfg: RunConfig) -> StudyResult:
    nm = cfg.norms
    scans = verify_inequalities(nm.m_max, nm.r, which=nm.which)
    out = StudyResult()
    out.reports["inequalities"] = {"m_max": nm.m_max, "r": nm.r, "scans": [s.as_dict() for s in scans]}
    out.tables["inequalities"] = Table(
        ("which", "sup", "sup_half", "plateau_gap", "plateau"),
        [(s.which, s.sup, s.sup_half, s.plateau_gap, int(s.plateau)) for s in scans],
        {"sup": "sup over 0 <= j <= m <= m_max", "sup_half": "same over m <= m_max/2"},
    )
    return out


def run_scaling(cfg: RunConfig) -> StudyResult:
    ph = cfg.physics
    init = bulk_init(cfg, eps=1.0)
    res = bulk.scaling_study(init, ph.eps_list, ph.t_probe)
    out = StudyResult()
    out.reports["scaling"] = res.as_dict()
    out.tables["magnitudes"] = Table(
        ("eps",) + tuple(f"sup_{n}" for n in bulk.TRACE_NAMES),
        [(float(e),) + tuple(float(res.magnitudes[n][i]) for n in bulk.TRACE_NAMES) for i, e in enumerate(res.eps)],
        {"sup_*": f"bottom-wall trace maxima at t = {ph.t_probe}"},
    )
    return out


def run_iota_sweep(cfg: RunConfig) -> StudyResult:
    ph = cfg.physics

    def make(spec):
        return layer_init(cfg, spec)

    res = bl.iota_depth_sweep(make, cfg.grid, ph.L_list, T=ph.T, dt=ph.dt)
    out = StudyResult()
    out.reports["iota_sweep"] = res.as_dict()
    out.tables["differences"] = Table(
        ("L_eta", "difference"),
        list(zip(res.depths.tolist(), res.differences.tolist())),
        {"difference": "L2 distance at t=T between the depth-L (zero-extended) and depth-2L solutions"},
    )
    return out


DRIVERS = {
    "linear-bulk": run_linear_bulk,
    "linear-bl": run_linear_layer,
    "iota-approx": run_linear_layer,
    "nonlinear-bl": run_picard,
    "picard": run_picard,
    "norms": run_norms,
    "inequalities": run_inequalities,
    "scaling-sweep": run_scaling,
    "iota-sweep": run_iota_sweep,
}


def run_study(cfg: RunConfig) -> StudyResult:
    return DRIVERS[cfg.study](cfg)
