"""Hot loops: compiled when the Cython extension is built, pure Python otherwise.

Set ``THEMEGEN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("THEMEGEN_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

grammar_violation = _impl.grammar_violation
theme_cross_positions = _impl.theme_cross_positions
dbscan_labels = _impl.dbscan_labels

__all__ = ["BACKEND", "dbscan_labels", "grammar_violation", "theme_cross_positions"]
