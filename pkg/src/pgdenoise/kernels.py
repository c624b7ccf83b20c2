"""Backend selection for the per-pixel kernels.

The compiled extension is used when it was built; otherwise the pure-Python
twin.  Set ``PGDENOISE_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("PGDENOISE_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def available_backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        return out
    out["compiled"] = _compiled
    return out


pg_sample = _impl.pg_sample
masked_nll = _impl.masked_nll
