"""Kernel backend selection: compiled Cython core if importable, else NumPy.

Set ``POGS_PURE_PYTHON=1`` to force the fallback.
"""
import os

from pogs import _pycore

try:
    if os.environ.get("POGS_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from pogs import _core
except ImportError:
    _core = None

core = _core if _core is not None else _pycore
COMPILED = _core is not None


def backends():
    """All importable backends, compiled first."""
    return [m for m in (_core, _pycore) if m is not None]
