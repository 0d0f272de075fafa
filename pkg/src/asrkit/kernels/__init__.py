"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ASRKIT_PURE=1 to force the pure-python backend (useful for
debugging and for benchmarking the two against each other).
"""

import os

from . import pure

if os.environ.get("ASRKIT_PURE") == "1":
    _backend = pure
    BACKEND = "pure"
else:
    try:
        from . import _ctc_ext as _backend
        BACKEND = "compiled"
    except ImportError:
        _backend = pure
        BACKEND = "pure"

ctc_loss_grad = _backend.ctc_loss_grad
ctc_prefix_all = _backend.ctc_prefix_all
edit_counts = _backend.edit_counts

__all__ = ["BACKEND", "ctc_loss_grad", "ctc_prefix_all", "edit_counts", "pure"]
