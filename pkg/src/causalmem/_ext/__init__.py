"""Numeric core: compiled Cython kernels with a pure numpy fallback.

The compiled module is used when it imports; set ``CAUSALMEM_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import os

from . import _kernels_py as python_kernels

compiled_kernels = None
if os.environ.get("CAUSALMEM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_kernels  # type: ignore[no-redef]
    except ImportError:
        compiled_kernels = None

_active = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"

single_pass = _active.single_pass
pairs_above = _active.pairs_above
top_k = _active.top_k

__all__ = ["BACKEND", "compiled_kernels", "python_kernels", "single_pass", "pairs_above", "top_k"]
