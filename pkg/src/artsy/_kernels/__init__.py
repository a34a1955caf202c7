"""Kernel backend selection.

The compiled Cython core is preferred when built; the numpy twin is the
fallback. ARTSY_BACKEND=python|compiled forces one side (compiled raises if
the extension is missing). The active choice is exported as BACKEND.
"""

from __future__ import annotations

import importlib
import os

_requested = os.environ.get("ARTSY_BACKEND", "").strip().lower()

if _requested not in ("", "compiled", "python"):
    raise ImportError(f"ARTSY_BACKEND must be 'compiled' or 'python', got {_requested!r}")

if _requested == "python":
    from . import pykernels as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ImportError("ARTSY_BACKEND=compiled but the extension is not built")
        from . import pykernels as _impl

        BACKEND = "python"

matmul = _impl.matmul
matmul_nt = _impl.matmul_nt
matmul_tn = _impl.matmul_tn
relu = _impl.relu
relu_grad = _impl.relu_grad
sigmoid = _impl.sigmoid
sigmoid_grad = _impl.sigmoid_grad
add_bias = _impl.add_bias
bias_grad = _impl.bias_grad
l2rows = _impl.l2rows
l2rows_grad = _impl.l2rows_grad
softmax_xent = _impl.softmax_xent
softmax_xent_grad = _impl.softmax_xent_grad
bce = _impl.bce
bce_grad = _impl.bce_grad
sgd_update = _impl.sgd_update


def load_backend(name: str):
    """Import one backend module by name; used by parity tests and benchmarks."""
    if name == "python":
        return importlib.import_module("artsy._kernels.pykernels")
    if name == "compiled":
        return importlib.import_module("artsy._kernels._core")
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    out = ["python"]
    try:
        importlib.import_module("artsy._kernels._core")
        out.insert(0, "compiled")
    except ImportError:
        pass
    return out
