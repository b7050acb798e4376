"""Kernel backend selection and thread control.

The compiled extension is used when it imports; ``GRAPHROM_PURE_PYTHON=1``
forces the NumPy fallback.  ``GRAPHROM_THREADS`` (or :func:`set_threads`)
bounds the kernel thread count; 1 is the deterministic default.  The same
bound is applied to the BLAS pool behind NumPy's dense products.
"""
import os

from threadpoolctl import threadpool_limits

from . import _kernels_py

try:
    if os.environ.get("GRAPHROM_PURE_PYTHON", "") == "1":
        raise ImportError("pure-Python mode requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_state = {"kernels": _compiled or _kernels_py, "threads": 1}


def _env_threads():
    raw = os.environ.get("GRAPHROM_THREADS")
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"GRAPHROM_THREADS must be an integer, got {raw!r}") from exc
    return max(1, value)


def has_compiled() -> bool:
    return _compiled is not None


def name() -> str:
    return "compiled" if _state["kernels"] is _compiled and _compiled else "python"


def kernels():
    return _state["kernels"]


def use(backend: str) -> None:
    """Switch to ``"compiled"`` or ``"python"`` kernels."""
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        _state["kernels"] = _compiled
    elif backend == "python":
        _state["kernels"] = _kernels_py
    else:
        raise ValueError(f"unknown backend {backend!r}")


def threads() -> int:
    return _state["threads"]


def set_threads(n=None) -> int:
    """Set the kernel thread count; ``None`` means env var, else logical cores."""
    if n is None:
        n = _env_threads() or os.cpu_count() or 1
    _state["threads"] = max(1, int(n))
    threadpool_limits(limits=_state["threads"], user_api="blas")
    return _state["threads"]


_env = _env_threads()
if _env is not None:
    set_threads(_env)
