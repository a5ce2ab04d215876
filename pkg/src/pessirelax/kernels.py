"""Kernel selection: compiled extension when importable, numpy fallback otherwise.

Set ``PESSIRELAX_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

__all__ = ["member_mask", "excess", "CODE_D", "BACKEND"]

CODE_D = _kernels_py.CODE_D

if os.environ.get("PESSIRELAX_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "compiled" if _impl is not _kernels_py else "python"
member_mask = _impl.member_mask
excess = _impl.excess
