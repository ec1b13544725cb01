"""Kernel backend selection.

Prefers the compiled extension and falls back to the numpy implementation
when the extension is missing or ORDCPM_PURE_PYTHON is set. Both backends
implement the same ``logpost_and_grad`` contract.
"""

from __future__ import annotations

import os

from . import _kernel_py

if os.environ.get("ORDCPM_PURE_PYTHON"):
    _impl = _kernel_py
else:
    try:
        from . import _kernel_c as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernel_py

BACKEND: str = _impl.BACKEND
logpost_and_grad = _impl.logpost_and_grad


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    try:
        from . import _kernel_c  # noqa: F401

        names.insert(0, "compiled")
    except ImportError:
        pass
    return names
