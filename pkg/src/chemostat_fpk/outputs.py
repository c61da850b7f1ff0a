"""Result emission: CSV tables, gnuplot scripts and a JSON manifest.

Floats are written with 17 significant digits so binary64 values round-trip
exactly.  Every file is written to a temporary name and renamed into place.
The manifest carries no timestamps, so identical inputs give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import _backend
from .config import ExperimentConfig, config_to_dict
from .experiments import Results, Table

MANIFEST = "manifest.json"


class OutputError(OSError):
    pass


def ensure_writable(directory) -> Path:
    """Create ``directory`` if needed and prove it accepts files."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=d, prefix=".probe-")
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise OutputError(f"output directory {d} is not writable: {exc}") from exc
    return d


def _fmt_column(col) -> list[str]:
    arr = np.asarray(col)
    if arr.dtype.kind == "f":
        return ["%.17g" % v for v in arr.tolist()]
    return [str(v) for v in arr.tolist()]


def format_csv(table: Table) -> str:
    cols = [_fmt_column(c) for c in table.columns]
    lines = [",".join(table.header)]
    lines += [",".join(row) for row in zip(*cols)]
    return "\n".join(lines) + "\n"


def gnuplot_script(table: Table) -> str | None:
    if table.plot is None:
        return None
    x, ys = table.plot
    xi = table.header.index(x) + 1
    parts = [f"'{table.name}' using {xi}:{table.header.index(y) + 1} with lines title '{y}'" for y in ys]
    return (
        "set datafile separator ','\n"
        f"set xlabel '{x}'\n"
        "set key autotitle columnhead\n"
        f"plot {', '.join(parts)}\n"
    )


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _versions() -> dict:
    try:
        pkg = metadata.version("chemostat-fpk")
    except metadata.PackageNotFoundError:  # pragma: no cover - source checkout
        pkg = "unknown"
    return {"chemostat_fpk": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_outputs(results: Results | None, directory, cfg: ExperimentConfig | None = None) -> dict:
    """Write every table plus ``manifest.json``; returns the manifest.

    On any failure the files written by this call are removed again.
    """
    d = ensure_writable(directory)
    written: list[Path] = []
    files = []
    formats = cfg.outputs.formats if cfg is not None else ("csv",)
    try:
        tables = results.tables if results is not None else []
        for table in tables:
            blobs = [(table.name, format_csv(table).encode())]
            script = gnuplot_script(table) if "gnuplot" in formats else None
            if script is not None:
                blobs.append((Path(table.name).stem + ".gp", script.encode()))
            for name, data in blobs:
                path = d / name
                _atomic_write(path, data)
                written.append(path)
                files.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        manifest = {
            "kind": results.kind if results is not None else None,
            "files": files,
            "config_sha256": cfg.digest() if cfg is not None else None,
            "config": config_to_dict(cfg) if cfg is not None else None,
            "seed": cfg.sde.seed if cfg is not None else None,
            "sde_backend": _backend.BACKEND,
            "versions": _versions(),
            "summary": _jsonable(results.summary) if results is not None else {},
            "diagnostics": _jsonable(results.diagnostics) if results is not None else {},
        }
        data = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        path = d / MANIFEST
        _atomic_write(path, data)
        written.append(path)
    except BaseException as exc:
        for path in written:
            path.unlink(missing_ok=True)
        if isinstance(exc, OSError) and not isinstance(exc, OutputError):
            raise OutputError(f"writing outputs to {d} failed: {exc}") from exc
        raise
    return manifest
