"""Element-kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation. Set ``PLAPLAB_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from plaplab import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("PLAPLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from plaplab import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

_NAMES = ("cell_gradients", "energy", "energy_and_residual", "local_hessians")


def _bind(module):
    g = globals()
    for name in _NAMES:
        g[name] = getattr(module, name)


_bind(_impl)


def backend_module(name: str):
    """Return the kernel module called ``name`` ("python" or "cython")."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from plaplab import _ckernels

        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name: str) -> str:
    """Route all kernel calls to backend ``name``; returns the previous backend name."""
    global BACKEND
    module = backend_module(name)
    previous = BACKEND
    _bind(module)
    BACKEND = name
    return previous
