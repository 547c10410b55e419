"""Backend selection for the Monte Carlo path kernel.

The compiled extension is used when importable; set ``RSGAME_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _kernel_py

_FORCE_PY = os.environ.get("RSGAME_PURE_PYTHON", "") not in ("", "0")

try:
    if _FORCE_PY:
        raise ImportError("pure-python backend forced")
    from . import _kernel as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"

KERNELS = {"python": _kernel_py.run_paths}
if _compiled is not None:
    KERNELS["compiled"] = _compiled.run_paths


def get_kernel(backend=None):
    """Return the path kernel for ``backend`` (default: the selected one)."""
    name = backend or BACKEND
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(KERNELS)}") from None
