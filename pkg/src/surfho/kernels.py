"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``SURFHO_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and by tests that compare the two backends).
"""

from __future__ import annotations

import os

if os.environ.get("SURFHO_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND: str = _impl.BACKEND
atom_coefficients = _impl.atom_coefficients
ga_objectives = _impl.ga_objectives
