"""Optional numba acceleration.

Set ``EGOSTEREO_DISABLE_NUMBA=1`` to force the pure-numpy kernels. When numba
is not importable the numpy path is used regardless of the flag.
"""
import os

ENV_FLAG = "EGOSTEREO_DISABLE_NUMBA"

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


def numba_disabled_by_env():
    return os.environ.get(ENV_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


def default_backend():
    if HAVE_NUMBA and not numba_disabled_by_env():
        return "numba"
    return "numpy"


def resolve_backend(backend=None):
    if backend in (None, "auto"):
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when available, identity decorator otherwise."""
    kwargs.setdefault("cache", True)
    if HAVE_NUMBA:
        return _njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn
