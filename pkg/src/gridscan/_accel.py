"""Backend selection for the hot numeric kernels.

Every kernel in :mod:`gridscan.kernels` exists twice: a numba ``@njit``
version and a pure-numpy version. Which one runs is decided once, at
import time, from the ``GRIDSCAN_BACKEND`` environment variable:

* ``auto`` (default) -- numba if it imports, numpy otherwise.
* ``numba``          -- force numba; raise if unavailable.
* ``numpy``          -- force the pure-numpy fallbacks.

Both paths produce the same results (see tests/test_kernels.py); numba is
only a speed knob. ``benchmarks/benchmark_backends.py`` compares them.
"""

import os

_CHOICE = os.environ.get("GRIDSCAN_BACKEND", "auto").strip().lower()

try:
    import numba  # noqa: F401
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via GRIDSCAN_BACKEND=numpy
    HAVE_NUMBA = False
    njit = None

if _CHOICE == "numpy":
    USE_NUMBA = False
elif _CHOICE == "numba":
    if not HAVE_NUMBA:
        raise ImportError(
            "GRIDSCAN_BACKEND=numba but numba is not importable; "
            "install numba or set GRIDSCAN_BACKEND=numpy"
        )
    USE_NUMBA = True
elif _CHOICE == "auto":
    USE_NUMBA = HAVE_NUMBA
else:
    raise ValueError(
        f"GRIDSCAN_BACKEND={_CHOICE!r} not understood (use auto, numba or numpy)"
    )

BACKEND = "numba" if USE_NUMBA else "numpy"
