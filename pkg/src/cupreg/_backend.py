"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy
implementation. ``CUPREG_BACKEND=python`` forces the fallback and
``CUPREG_BACKEND=compiled`` makes a missing extension an import error.
"""

from __future__ import annotations

import os

from . import _kernels_py

_choice = os.environ.get("CUPREG_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = _kernels_py
        BACKEND = "python"


def get_kernels(name: str | None = None):
    """Return the kernel module for ``name`` ('python', 'compiled') or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels  # type: ignore[attr-defined]

        return _kernels
    raise ValueError(f"unknown backend {name!r}")
