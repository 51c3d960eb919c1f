"""Numba availability and the switch that selects the pure-numpy kernels.

Set ``RASOPT_DISABLE_NUMBA=1`` in the environment before importing
:mod:`rasopt` to force the numpy fallback path.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}


def _env_disabled() -> bool:
    return os.environ.get("RASOPT_DISABLE_NUMBA", "").strip().lower() not in _FALSY


try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA and not _env_disabled()

__all__ = ["HAVE_NUMBA", "USE_NUMBA", "njit"]
