import sys

__author__ = "DualNav contributors"
__email__ = "dualnav@users.noreply.github.com"
__doc__ = """A desk-scale dual-process web navigation agent: a synthetic web \
simulator, a fast scorer, a deliberative planner and the switch between them."""
__license__ = "AGPL-3"


try:
    if sys.version_info >= (3, 8):
        from importlib.metadata import version, PackageNotFoundError
    else:
        from importlib_metadata import version, PackageNotFoundError
except ImportError:  # pylint: disable=W7938
    # this happens when setup.py imports dualnav
    pass
else:
    try:
        __version__ = version("dualnav")
    except PackageNotFoundError:  # pylint: disable=W7938
        # package is not installed
        pass
