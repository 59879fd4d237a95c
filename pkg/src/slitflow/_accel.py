"""Backend selection for the hot kernels.

``SLITFLOW_NUMBA=0`` (or a missing numba install) routes every call through the
pure-numpy implementations.
"""

from . import _kernels_numpy
from .config import USE_NUMBA

backend = _kernels_numpy
BACKEND_NAME = "numpy"

if USE_NUMBA:
    try:
        from . import _kernels_numba
    except ImportError:  # pragma: no cover - numba absent
        pass
    else:
        backend = _kernels_numba
        BACKEND_NAME = "numba"


def get_backend(name=None):
    if name is None:
        return backend
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    raise ValueError(f"unknown kernel backend {name!r}")
