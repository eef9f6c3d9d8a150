"""Command-line entry point.

    stratlayer run CONFIG.ini [--set section.key=value ...]
    stratlayer studies

Outputs go to ``output.dir`` (relative paths are placed under
``$STRATLAYER_OUTPUT_ROOT`` when set): ``manifest.json``, one CSV per table,
one JSON per report and ``snapshots/*.npz``.  Files contain no timestamps, so
identical configurations give byte-identical CSV and JSON.

Exit codes: 0 success, 2 configuration error, 3 solver divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .config import STUDIES, RunConfig, load_config
from .errors import CompatibilityError, ConfigError, DivergenceError, SnapshotError
from .snapshot import save_snapshot
from .studies import StudyResult, Table, run_study

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4


def _plain(x):
    """JSON-safe, deterministic value: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_json(obj, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(table: Table, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_cell(v) for v in row])


def write_outputs(cfg: RunConfig, result: StudyResult, outdir: str) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    files = []
    for name, table in sorted(result.tables.items()):
        write_csv(table, os.path.join(outdir, f"{name}.csv"))
        files.append(f"{name}.csv")
    for name, report in sorted(result.reports.items()):
        write_json(report, os.path.join(outdir, f"{name}.json"))
        files.append(f"{name}.json")
    if cfg.output.snapshots and result.snapshots:
        snapdir = os.path.join(outdir, "snapshots")
        os.makedirs(snapdir, exist_ok=True)
        for name, state in result.snapshots:
            save_snapshot(state, os.path.join(snapdir, f"{name}.npz"))
            files.append(f"snapshots/{name}.npz")
    manifest = {
        "code_version": __version__,
        "study": cfg.study,
        "config": cfg.as_dict(),
        "grid": cfg.as_dict()["grid"],
        "columns": {name: {"columns": list(t.columns), "description": t.description} for name, t in sorted(result.tables.items())},
        "files": files,
    }
    write_json(manifest, os.path.join(outdir, "manifest.json"))
    return files


def run(cfg: RunConfig, outdir: str | None = None) -> tuple[StudyResult, str]:
    """Run a validated configuration and write its artifacts; returns the result and directory."""
    outdir = outdir or cfg.output_dir()
    result = run_study(cfg)
    write_outputs(cfg, result, outdir)
    return result, outdir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratlayer", description="Stratified boundary-layer numerical studies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the study described by a configuration file")
    p_run.add_argument("config", help="INI configuration file")
    p_run.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one setting (repeatable)")
    p_run.add_argument("--output", help="output directory (overrides output.dir)")
    sub.add_parser("studies", help="list available studies")
    return parser


def _fail(code: int, message: str) -> int:
    print(f"stratlayer: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "studies":
        print("\n".join(STUDIES))
        return EXIT_OK
    try:
        cfg = load_config(args.config, args.overrides)
        _, outdir = run(cfg, args.output)
    except DivergenceError as exc:
        report = getattr(exc, "report", None)
        iterates = getattr(report, "iterates", None)
        suffix = f" after {iterates} iterates" if iterates is not None else ""
        return _fail(EXIT_DIVERGENCE, f"solver diverged{suffix}: {exc}")
    except (ConfigError, CompatibilityError) as exc:
        return _fail(EXIT_CONFIG, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
    except (SnapshotError, OSError) as exc:
        return _fail(EXIT_IO, str(exc).splitlines()[0])
    print(f"{cfg.study}: wrote {outdir}")
    return EXIT_OK
