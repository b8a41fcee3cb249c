"""Selects the kernel implementation at import time.

`HDMAE_KERNELS` controls the choice:
  auto (default) - compiled extension if importable, else numpy fallback
  ext            - require the compiled extension (ImportError if missing)
  python         - force the numpy fallback

The active backend's name is exposed as `KERNEL_BACKEND`. Both backends share
one function surface (gelu_fwd/bwd, softmax_fwd/bwd, layernorm_fwd/bwd,
adamw_update); see `_kernels_py` for the reference semantics.
"""

from __future__ import annotations

import os

from . import _kernels_py

_choice = os.environ.get("HDMAE_KERNELS", "auto").strip().lower()

if _choice == "python":
    _impl = _kernels_py
    KERNEL_BACKEND = "python"
elif _choice in ("auto", "ext", ""):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        KERNEL_BACKEND = "ext"
    except ImportError:
        if _choice == "ext":
            raise ImportError(
                "HDMAE_KERNELS=ext but hdmae._kernels is not built; "
                "run `python setup.py build_ext --inplace`"
            )
        _impl = _kernels_py
        KERNEL_BACKEND = "python"
else:
    raise ValueError(f"HDMAE_KERNELS must be auto, ext, or python (got {_choice!r})")


def has_extension() -> bool:
    try:
        from . import _kernels  # noqa: F401

        return True
    except ImportError:
        return False


def get_impl(name: str):
    """Return a backend module by name ('ext' or 'python'); for benchmarks."""
    if name == "python":
        return _kernels_py
    if name == "ext":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd
adamw_update = _impl.adamw_update
