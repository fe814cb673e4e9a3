from .cloud import NormMeta, PointCloud, normalize
from .io import CloudFormatError, read_cloud, read_ply, read_xyz, write_xyz
from .knn import SpatialHash, knn, knn_bruteforce, nearest_other
from .metrics import MetricsReport, chamfer, compare, coverage, hausdorff
from .synthetic import SHAPES, sample_synthetic

__all__ = [
    "SHAPES",
    "CloudFormatError",
    "MetricsReport",
    "NormMeta",
    "PointCloud",
    "SpatialHash",
    "chamfer",
    "compare",
    "coverage",
    "hausdorff",
    "knn",
    "knn_bruteforce",
    "nearest_other",
    "normalize",
    "read_cloud",
    "read_ply",
    "read_xyz",
    "sample_synthetic",
    "write_xyz",
]
