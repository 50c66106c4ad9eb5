"""Kernel backend selection: compiled extension if available, numpy fallback.

Set SHAPEUQ_PURE=1 to force the fallback (used by the backend-parity tests
and the benchmark).
"""

import os

from . import pure as _pure

_FORCE_PURE = os.environ.get("SHAPEUQ_PURE", "") not in ("", "0")

if not _FORCE_PURE:
    try:
        from . import _compiled as _impl
    except ImportError:
        _impl = _pure
else:
    _impl = _pure

marching_cubes_kernel = _impl.marching_cubes_kernel
sphere_trace_kernel = _impl.sphere_trace_kernel
superellipsoid_sdf_kernel = _impl.superellipsoid_sdf_kernel
chamfer_terms_kernel = _impl.chamfer_terms_kernel


def active_backend() -> str:
    """'compiled' when the Cython extension is in use, else 'pure'."""
    return _impl.BACKEND_NAME


def get_backend(name: str):
    """Fetch a specific backend module ('pure' or 'compiled') regardless of
    which one is active; raises ImportError if the compiled one is absent."""
    if name == "pure":
        return _pure
    if name == "compiled":
        from . import _compiled
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
