"""Backend selection for the per-example kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``POPLL_KERNELS=python`` to force the fallback.
"""

import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:  # pragma: no cover - depends on the build
    from . import _kernels as _compiled

    BACKENDS["cython"] = _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("POPLL_KERNELS", "").strip().lower()
if _requested and _requested not in ("python", "cython"):
    raise ImportError(f"POPLL_KERNELS must be 'python' or 'cython', got {_requested!r}")
if _requested == "cython" and _compiled is None:
    raise ImportError("POPLL_KERNELS=cython but the compiled extension is not built")

BACKEND = "python" if _requested == "python" or _compiled is None else "cython"
_impl = BACKENDS[BACKEND]

WEIGHTED_CE, CC, LWS, CLPL = 0, 1, 2, 3

restricted_argmax = _impl.restricted_argmax
purify = _impl.purify
normalize_weights = _impl.normalize_weights
loss_grad = _impl.loss_grad
