"""Kernel backend selection.

The hot numeric kernels (convolution, pooling, pairwise distances) exist in
two implementations: numba ``@njit`` loops and pure-numpy vectorized code.
``OSAL_BACKEND`` picks one at import time:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - require numba, raise if unavailable
* ``numpy``          - force the pure-numpy path

The flag is read once when :mod:`osal.kernels` is first imported, so set it
before importing the package. Both paths compute identical quantities; they
may differ in the last few floating-point bits because summation order
differs.
"""

import os

_VALID = ("auto", "numba", "numpy")


def requested_mode() -> str:
    mode = os.environ.get("OSAL_BACKEND", "auto").lower()
    if mode not in _VALID:
        raise ValueError(f"OSAL_BACKEND must be one of {_VALID}, got {mode!r}")
    return mode


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def resolve_backend() -> str:
    """Return the backend name actually in effect: 'numba' or 'numpy'."""
    mode = requested_mode()
    if mode == "numpy":
        return "numpy"
    if mode == "numba":
        if not numba_available():
            raise ImportError("OSAL_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if numba_available() else "numpy"
