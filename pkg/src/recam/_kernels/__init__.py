"""Hot kernels with a compiled core and a pure-Python fallback.

The Cython extension is preferred; set ``RECAM_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` reports which one was selected at import.
"""

import os

from . import _bpe_py

if os.environ.get("RECAM_PURE_PYTHON", "") not in ("", "0"):
    MergeTable = _bpe_py.MergeTable
else:
    try:
        from ._bpe_cy import MergeTable
    except ImportError:  # extension not built
        MergeTable = _bpe_py.MergeTable

BACKEND = MergeTable.backend
PyMergeTable = _bpe_py.MergeTable


def compiled_merge_table():
    """Return the compiled ``MergeTable`` class, or None if not built."""
    try:
        from ._bpe_cy import MergeTable as compiled
    except ImportError:
        return None
    return compiled


__all__ = ["BACKEND", "MergeTable", "PyMergeTable", "compiled_merge_table"]
