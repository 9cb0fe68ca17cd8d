"""woundbench: benchmarking toolkit for 3D wound morphometry."""

__version__ = "0.1.0"

from .errors import InputError, MeshFormatError, NumericalError, WoundbenchError  # noqa: E402
from .geometry import (  # noqa: E402
    SimilarityTransform,
    SpatialIndex,
    TriangleMesh,
    apply_transform,
    compose,
    nearest_on_surface,
    sample_surface,
    vertex_normals,
)
from .kernels import DEFAULT_BACKEND  # noqa: E402

__all__ = [
    "__version__",
    "DEFAULT_BACKEND",
    "InputError",
    "MeshFormatError",
    "NumericalError",
    "WoundbenchError",
    "SimilarityTransform",
    "SpatialIndex",
    "TriangleMesh",
    "apply_transform",
    "compose",
    "nearest_on_surface",
    "sample_surface",
    "vertex_normals",
]
