"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled module is used when it imports cleanly, unless the environment
variable ``CHURNSURV_PURE_PYTHON`` is set to a non-empty value.  ``BACKEND``
names the active implementation; ``get_backend(name)`` returns either one
explicitly (used by the equivalence tests and the benchmark).
"""
import os

from . import _pure

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

__all__ = [
    "BACKEND",
    "available_backends",
    "enet_coordinate_descent",
    "get_backend",
    "lstm_gates_backward",
    "lstm_gates_forward",
]


def available_backends():
    return ["cython", "python"] if _ckernels is not None else ["python"]


def get_backend(name):
    if name == "python":
        return _pure
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


if _ckernels is not None and not os.environ.get("CHURNSURV_PURE_PYTHON"):
    BACKEND = "cython"
else:
    BACKEND = "python"

_impl = get_backend(BACKEND)
enet_coordinate_descent = _impl.enet_coordinate_descent
lstm_gates_forward = _impl.lstm_gates_forward
lstm_gates_backward = _impl.lstm_gates_backward
