"""Select the compiled kernel when available, numpy otherwise.

Set ``CHEMOSTAT_FPK_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

_fallback_kernel = _fallback.simulate_paths

try:
    from . import _kernels  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None

_compiled_kernel = None if _kernels is None else _kernels.simulate_paths

if os.environ.get("CHEMOSTAT_FPK_BACKEND", "").lower() in ("python", "numpy", "fallback"):
    BACKEND = "python"
    simulate_paths = _fallback_kernel
elif _compiled_kernel is not None:
    BACKEND = "compiled"
    simulate_paths = _compiled_kernel
else:
    log.info("compiled kernel unavailable, using numpy fallback")
    BACKEND = "python"
    simulate_paths = _fallback_kernel


def kernel(name: str | None = None):
    """Return the path kernel for ``name`` (``"compiled"``/``"python"``/``None``)."""
    if name is None:
        return simulate_paths
    if name == "python":
        return _fallback_kernel
    if name == "compiled":
        if _compiled_kernel is None:
            raise RuntimeError("compiled kernel is not built")
        return _compiled_kernel
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    return _compiled_kernel is not None
