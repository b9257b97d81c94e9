"""Selects the convolution backend at import time.

The compiled extension is preferred; the numpy fallback is used when the
extension is missing or when PMRI_BACKEND=py is set. Both expose
``conv_forward``, ``conv_grad_input`` and ``conv_grad_weight`` with
bit-identical contracts (see ``_convnp`` for the reference semantics).
"""

import os

from . import _convnp

_requested = os.environ.get("PMRI_BACKEND", "").lower()

if _requested in ("py", "numpy"):
    _impl = _convnp
    BACKEND = "numpy"
else:
    try:
        from . import _convcore as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested in ("ext", "compiled"):
            raise
        _impl = _convnp
        BACKEND = "numpy"

conv_forward = _impl.conv_forward
conv_grad_input = _impl.conv_grad_input
conv_grad_weight = _impl.conv_grad_weight
