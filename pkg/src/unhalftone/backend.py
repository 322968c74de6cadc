"""Kernel backend selection.

The hot inner loops (error diffusion, 2-D filtering, NCHW convolution and
its gradients) exist twice: a numba-jitted version in ``_kernels_numba``
and a pure-numpy version in ``_kernels_numpy``. Both expose the same
function surface and agree numerically (bitwise for error diffusion,
to floating-point accumulation order for the convolutions).

The active backend is chosen once at import time from the environment
variable ``UNHALFTONE_BACKEND``:

    UNHALFTONE_BACKEND=numba   require numba, fail if unavailable
    UNHALFTONE_BACKEND=numpy   force the pure-numpy path
    unset / "auto"             numba when importable, else numpy

``benchmarks/bench_kernels.py`` imports both modules directly to compare
them; library code always goes through :func:`kernels`.
"""

from __future__ import annotations

import os

ENV_VAR = "UNHALFTONE_BACKEND"
_CHOICES = ("auto", "numba", "numpy")


def _resolve():
    choice = os.environ.get(ENV_VAR, "auto").strip().lower() or "auto"
    if choice not in _CHOICES:
        raise ValueError(
            f"{ENV_VAR}={choice!r} is not valid; expected one of {_CHOICES}"
        )
    if choice == "numpy":
        from . import _kernels_numpy

        return _kernels_numpy, "numpy"
    try:
        from . import _kernels_numba

        return _kernels_numba, "numba"
    except ImportError:
        if choice == "numba":
            raise
        from . import _kernels_numpy

        return _kernels_numpy, "numpy"


_active, BACKEND = _resolve()


def kernels():
    """Return the active kernel module."""
    return _active
