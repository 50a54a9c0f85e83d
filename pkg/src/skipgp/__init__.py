"""Matrix-free Gaussian process regression with fast MVMs for product kernels."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("skipgp")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import SkipGPError  # noqa: E402

__all__ = ["SkipGPError", "__version__"]
