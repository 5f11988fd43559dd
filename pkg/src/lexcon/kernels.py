"""Select the compiled constraint kernels when available.

Set ``LEXCON_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and by the parity tests).
"""

from __future__ import annotations

import os

from lexcon import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LEXCON_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from lexcon import _ckernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        _impl = _ckernels
        BACKEND = "cython"

advance_one = _impl.advance_one
advance_batch = _impl.advance_batch
forced_tokens = _impl.forced_tokens


def implementations() -> dict:
    """Every importable backend, keyed by name."""
    out = {"python": _kernels_py}
    try:
        from lexcon import _ckernels  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
