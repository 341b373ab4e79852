"""JIT switch for the hot simulation kernels.

Kernels are written once as plain numpy/Python and compiled with numba when it
is importable. Set ``HETVOTER_DISABLE_JIT=1`` to run them as ordinary Python
(slow, but useful for debugging and for checking that both paths agree).
"""
import os

DISABLE_JIT = os.environ.get("HETVOTER_DISABLE_JIT", "0").lower() in ("1", "true", "yes")

try:
    if DISABLE_JIT:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def jit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched when JIT is off."""
    if HAS_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


def python_version(fn):
    """The uncompiled Python function behind a (possibly) jitted kernel."""
    return getattr(fn, "py_func", fn)


BACKEND = "numba" if HAS_NUMBA else "python"
