"""Joint survival-time and churn-probability estimation from early game telemetry."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("churnsurv")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"


def build_id():
    """Identifier embedded in output metadata: package version plus kernel backend."""
    from ._kernels import BACKEND

    return f"churnsurv {__version__} ({BACKEND} kernels)"


__all__ = ["__version__", "build_id"]
