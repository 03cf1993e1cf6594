"""Inner-loop kernels with a compiled core and a pure-numpy fallback.

The Cython extension is used automatically when it built; set
``DECLIP_KERNELS=numpy`` (or ``cython``) to force a backend before
import, or call :func:`set_backend` at runtime (used by the parity tests
and the kernel benchmark).
"""

from __future__ import annotations

import os

from . import _numpy_kernels
from ._numpy_kernels import (  # noqa: F401  (re-exported constants)
    KIND_CLIP_NEG,
    KIND_CLIP_POS,
    KIND_RELIABLE,
    MAG_FLOOR,
)

_IMPLS = {"numpy": _numpy_kernels}
try:
    from . import _cykernels  # type: ignore[attr-defined]
except ImportError:
    _cykernels = None
else:
    _IMPLS["cython"] = _cykernels


def available_backends() -> list[str]:
    return sorted(_IMPLS)


_requested = os.environ.get("DECLIP_KERNELS", "auto").strip().lower()
if _requested == "auto":
    _active = "cython" if "cython" in _IMPLS else "numpy"
elif _requested in _IMPLS:
    _active = _requested
else:
    raise ImportError(
        f"DECLIP_KERNELS={_requested!r} is not available; "
        f"built backends: {available_backends()}"
    )


def get_impl():
    """Return the active kernel module (grab once per chunk solve)."""
    return _IMPLS[_active]


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown kernel backend {name!r}; built: {available_backends()}")
    _active = name


def spectrum_hard_threshold(v, k, add=None):
    return _IMPLS[_active].spectrum_hard_threshold(v, k, add)


def project_clip(v, kind, bound):
    return _IMPLS[_active].project_clip(v, kind, bound)


def project_clip_complex(w, kind, bound):
    return _IMPLS[_active].project_clip_complex(w, kind, bound)


def diff_norm(a, b):
    return _IMPLS[_active].diff_norm(a, b)


def accumulate_diff(u, a, b):
    return _IMPLS[_active].accumulate_diff(u, a, b)
