"""
genhoi - Desk-scale guided-embedding HOI detection

Synthetic scenes, a two-branch transformer detector, zero-shot splits and HICO-style mAP.
"""

from importlib.metadata import PackageNotFoundError, version

from genhoi.config import RunConfig, Settings


def __set_git_version__() -> str:
    """Version from git tags via hatch-vcs, or 0.1.0 when the package is not installed."""
    try:
        return version("genhoi")
    except PackageNotFoundError:
        return "0.1.0"


__version__ = __set_git_version__()
__author__ = "genhoi contributors"

__all__ = ["__version__", "RunConfig", "Settings"]
