"""Backend selection for the geometry hot loops.

The compiled extension is used when it was built; otherwise, or when
``CROWDSTEER_KERNELS=python`` is set, the numpy implementation is used.
Both backends expose ``ray_hit_matrix``, ``ray_cast`` and
``points_min_distance``.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CROWDSTEER_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

ray_hit_matrix = _impl.ray_hit_matrix
ray_cast = _impl.ray_cast
points_min_distance = _impl.points_min_distance


def available_backends():
    """Map of backend name to kernel module, for benchmarks and parity tests."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
