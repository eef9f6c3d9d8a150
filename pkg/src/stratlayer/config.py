"""Run configuration: a flat INI file with one section per concern.

Example::

    [run]
    study = picard

    [grid]
    Nx = 32
    Ny = 32
    Neta = 256
    L_eta = 10

    [physics]
    T = 0.1
    dt = auto

    [init]
    profile = mode
    amplitude = 1e-2

Every key is typed and checked; unknown sections or keys are configuration
errors so typos never pass silently.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .grids import GridSpec

STUDIES = (
    "linear-bulk",
    "linear-bl",
    "iota-approx",
    "nonlinear-bl",
    "norms",
    "inequalities",
    "scaling-sweep",
    "iota-sweep",
    "picard",
)
PROFILES = ("zero", "mode", "random", "wall-forced", "invariant", "snapshot")
OUTPUT_ROOT_ENV = "STRATLAYER_OUTPUT_ROOT"


@dataclass(frozen=True)
class PhysicsConfig:
    eps: float = 0.1
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    T: float = 1.0
    dt: float | None = None  # None means automatic
    dt_c: float = 0.25
    t_probe: float = 1.0
    L_list: tuple = (10.0, 20.0, 40.0)
    project: bool = True


@dataclass(frozen=True)
class NormsConfig:
    d: float = 1.0
    r: float = 2.0
    tau: float = 0.5
    M: int = 8
    C_d: float = 1e-3
    tol: float = 1e-10
    max_iter: int = 30
    m_max: int = 200
    which: tuple = (1, 2, 3, 4)


@dataclass(frozen=True)
class InitConfig:
    profile: str = "mode"
    amplitude: float = 1e-2
    decay: float = 3.0
    kx: int = 1
    ky: int = 0
    component: str = "both"
    seed: int = 0
    path: str = ""


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "output"
    stride: int = 1
    snapshots: bool = True


@dataclass(frozen=True)
class RunConfig:
    study: str = "linear-bl"
    grid: GridSpec = field(default_factory=GridSpec)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    norms: NormsConfig = field(default_factory=NormsConfig)
    init: InitConfig = field(default_factory=InitConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def output_dir(self, environ=None) -> str:
        """Output directory; relative paths are placed under ``$STRATLAYER_OUTPUT_ROOT`` if set."""
        environ = os.environ if environ is None else environ
        root = environ.get(OUTPUT_ROOT_ENV)
        if root and not os.path.isabs(self.output.dir):
            return os.path.join(root, self.output.dir)
        return self.output.dir

    def as_dict(self) -> dict:
        out = {"run": {"study": self.study}}
        for name in ("grid", "physics", "norms", "init", "output"):
            out[name] = asdict(getattr(self, name))
        return out


_SECTIONS = {"grid": GridSpec, "physics": PhysicsConfig, "norms": NormsConfig, "init": InitConfig, "output": OutputConfig}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(section: str, key: str, raw: str, default):
    where = f"{section}.{key}"
    text = raw.strip()
    try:
        if section == "physics" and key == "dt":
            return None if text.lower() == "auto" else float(text)
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(p) for p in text.replace(",", " ").split())
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} ({exc})") from None


def _section_values(section: str, items: dict) -> dict:
    cls = _SECTIONS[section]
    defaults = {f.name: f.default for f in fields(cls)}
    lower = {name.lower(): name for name in defaults}
    out = {}
    for key, raw in items.items():
        name = lower.get(key.lower())
        if name is None:
            raise ConfigError(f"unknown key {section}.{key}")
        out[name] = _coerce(section, name, raw, defaults[name])
    return out


def parse_override(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> ``(section, key, value)``."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override {text!r} needs a section, e.g. grid.Neta=128")
    section, key = lhs.strip().split(".", 1)
    return section.strip().lower(), key.strip(), value


def config_from_mapping(raw: dict[str, dict[str, str]]) -> RunConfig:
    """Build and validate a :class:`RunConfig` from string-valued sections."""
    unknown = set(raw) - set(_SECTIONS) - {"run"}
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]")
    run = dict(raw.get("run", {}))
    study = run.pop("study", None)
    if study is None:
        raise ConfigError("run.study is required")
    if run:
        raise ConfigError(f"unknown key run.{next(iter(run))}")
    parts = {}
    for section, cls in _SECTIONS.items():
        values = _section_values(section, raw.get(section, {}))
        try:
            parts[section] = cls(**values)
        except ConfigError as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    cfg = RunConfig(study=study.strip(), **parts)
    validate(cfg)
    return cfg


def load_config(path, overrides=()) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {str(exc).splitlines()[0]}") from None
    raw = {s.lower(): dict(parser.items(s)) for s in parser.sections()}
    for text in overrides:
        section, key, value = parse_override(text)
        raw.setdefault(section, {})[key] = value
    return config_from_mapping(raw)


def validate(cfg: RunConfig) -> None:
    if cfg.study not in STUDIES:
        raise ConfigError(f"run.study must be one of {', '.join(STUDIES)}; got {cfg.study!r}")
    ph, nm, ini, out = cfg.physics, cfg.norms, cfg.init, cfg.output
    if not ph.T > 0:
        raise ConfigError(f"physics.T must be positive, got {ph.T}")
    if not ph.eps > 0 or any(not e > 0 for e in ph.eps_list):
        raise ConfigError("physics.eps and physics.eps_list must be positive")
    if ph.dt is not None and not ph.dt > 0:
        raise ConfigError(f"physics.dt must be positive or auto, got {ph.dt}")
    if not ph.dt_c > 0:
        raise ConfigError(f"physics.dt_c must be positive, got {ph.dt_c}")
    if cfg.study == "scaling-sweep" and len(ph.eps_list) < 3:
        raise ConfigError("physics.eps_list needs at least 3 values for a slope fit")
    if cfg.study == "iota-sweep" and (len(ph.L_list) < 2 or any(not L > 0 for L in ph.L_list)):
        raise ConfigError("physics.L_list needs at least 2 positive depths")
    if not nm.tol > 0 or nm.max_iter < 1 or nm.m_max < 1 or not nm.C_d >= 0:
        raise ConfigError("norms.tol, norms.max_iter, norms.m_max must be positive and norms.C_d non-negative")
    if any(w not in (1, 2, 3, 4) for w in nm.which):
        raise ConfigError(f"norms.which entries must be in 1..4, got {nm.which}")
    if ini.profile not in PROFILES:
        raise ConfigError(f"init.profile must be one of {', '.join(PROFILES)}; got {ini.profile!r}")
    if ini.profile == "snapshot" and not ini.path:
        raise ConfigError("init.path is required when init.profile = snapshot")
    if ini.component not in ("theta", "v", "both"):
        raise ConfigError(f"init.component must be theta, v or both; got {ini.component!r}")
    if out.stride < 1:
        raise ConfigError(f"output.stride must be >= 1, got {out.stride}")
    from .norms import NormParams

    NormParams(d=nm.d, r=nm.r, tau=nm.tau, M=nm.M)


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Programmatic counterpart of ``--set``: ``with_overrides(cfg, grid={"Neta": 64})``."""
    parts = {}
    for section, changes in sections.items():
        if section == "study":
            parts["study"] = changes
            continue
        parts[section] = replace(getattr(cfg, section), **changes)
    out = replace(cfg, **parts)
    validate(out)
    return out
