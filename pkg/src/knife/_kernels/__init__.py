"""Hot kernels for the training loop, with backend selection at import.

The compiled Cython extension is preferred; a pure-numpy implementation is
the fallback. Force a backend with KNIFE_KERNELS=cy|np (default: auto).
Both backends satisfy the same contracts; see benchmarks/bench_kernels.py
for the speed comparison.
"""

import os

from . import numpy_backend

_choice = os.environ.get("KNIFE_KERNELS", "auto")
if _choice not in ("auto", "cy", "np"):
    raise ValueError(f"KNIFE_KERNELS must be auto|cy|np, got {_choice!r}")

if _choice in ("auto", "cy"):
    try:
        from . import _cykernels as _impl

        BACKEND = "cy"
    except ImportError:
        if _choice == "cy":
            raise
        _impl = numpy_backend
        BACKEND = "np"
else:
    _impl = numpy_backend
    BACKEND = "np"

conv1d_forward = _impl.conv1d_forward
conv1d_backward_x = _impl.conv1d_backward_x
conv1d_backward_w = _impl.conv1d_backward_w
fft_stages = _impl.fft_stages

__all__ = [
    "BACKEND",
    "numpy_backend",
    "conv1d_forward",
    "conv1d_backward_x",
    "conv1d_backward_w",
    "fft_stages",
]
