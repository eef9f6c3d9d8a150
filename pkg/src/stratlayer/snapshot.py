"""Lossless state snapshots.

A snapshot is an ``.npz`` container holding the coefficient arrays as
little-endian ``complex128`` plus a header: the state kind, the grid fields,
time, and (for the channel) ``eps``.  Loading against an expected grid refuses
any mismatch and names the offending field.
"""

from __future__ import annotations

import os
import zipfile
from dataclasses import fields

import numpy as np

from . import __version__
from .boundary_layer import BLState
from .bulk import BulkState
from .errors import SnapshotError
from .grids import GridSpec

FORMAT_VERSION = 1
_COMPLEX = np.dtype("<c16")
_FLOAT = np.dtype("<f8")
_ARRAYS = {"BLState": ("v", "theta"), "BulkState": ("v", "w", "theta")}
_GRID_FIELDS = tuple(f.name for f in fields(GridSpec))


def _grid_header(spec: GridSpec) -> dict:
    out = {}
    for name in _GRID_FIELDS:
        value = getattr(spec, name)
        dtype = np.dtype("<i8") if isinstance(value, int) else _FLOAT
        out[f"grid.{name}"] = np.asarray(value, dtype=dtype)
    return out


def save_snapshot(state, path) -> str:
    """Write ``state`` to ``path`` (``.npz`` appended by numpy if missing); returns the path."""
    kind = type(state).__name__
    if kind not in _ARRAYS:
        raise SnapshotError(f"cannot snapshot object of type {kind}")
    payload = {name: np.asarray(getattr(state, name)).astype(_COMPLEX) for name in _ARRAYS[kind]}
    payload.update(_grid_header(state.spec))
    payload["kind"] = np.asarray(kind)
    payload["format_version"] = np.asarray(FORMAT_VERSION, dtype="<i8")
    payload["code_version"] = np.asarray(__version__)
    payload["t"] = np.asarray(state.t, dtype=_FLOAT)
    if kind == "BulkState":
        payload["eps"] = np.asarray(state.eps, dtype=_FLOAT)
    path = os.fspath(path)
    try:
        with open(path, "wb") as fh:
            np.savez(fh, **payload)
    except OSError as exc:
        raise SnapshotError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def _read(path) -> dict:
    try:
        with np.load(os.fspath(path), allow_pickle=False) as data:
            return {k: data[k] for k in data.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc


def load_snapshot(path, expected: GridSpec | None = None, kind: str | None = None):
    """Read a snapshot; with ``expected`` every grid field must match exactly."""
    data = _read(path)
    missing = [k for k in ("kind", "t", *(f"grid.{n}" for n in _GRID_FIELDS)) if k not in data]
    if missing:
        raise SnapshotError(f"snapshot {path} is missing field {missing[0]}")
    stored_kind = str(data["kind"])
    if stored_kind not in _ARRAYS:
        raise SnapshotError(f"snapshot {path} has unknown kind {stored_kind!r}")
    if kind is not None and stored_kind != kind:
        raise SnapshotError(f"snapshot {path} holds {stored_kind}, expected {kind}")
    grid = {}
    for name in _GRID_FIELDS:
        value = data[f"grid.{name}"].item()
        grid[name] = int(value) if isinstance(getattr(GridSpec(), name), int) else float(value)
    if expected is not None:
        for name in _GRID_FIELDS:
            if grid[name] != getattr(expected, name):
                raise SnapshotError(
                    f"snapshot {path} grid mismatch in {name}: file has {grid[name]}, run expects {getattr(expected, name)}"
                )
    spec = GridSpec(**grid)
    arrays = {}
    for name in _ARRAYS[stored_kind]:
        if name not in data:
            raise SnapshotError(f"snapshot {path} is missing field {name}")
        arrays[name] = data[name].astype(complex)
    t = float(data["t"])
    try:
        if stored_kind == "BLState":
            return BLState(arrays["v"], arrays["theta"], spec, t)
        return BulkState(arrays["v"], arrays["w"], arrays["theta"], spec, float(data["eps"]), t)
    except ValueError as exc:
        raise SnapshotError(f"snapshot {path} arrays are inconsistent with its grid: {exc}") from exc
