from .batching import batches
from .cloud import Dataset, PointCloud, augment, normalize_unit_sphere
from .io import convert, read_dataset, read_pcld, write_dataset, write_pcld
from .mesh import TriangleMesh, load_mesh, parse_mesh, sample_surface
from .synthetic import make_synthetic, split_dataset

__all__ = [
    "Dataset",
    "PointCloud",
    "TriangleMesh",
    "augment",
    "batches",
    "convert",
    "load_mesh",
    "make_synthetic",
    "normalize_unit_sphere",
    "parse_mesh",
    "read_dataset",
    "read_pcld",
    "sample_surface",
    "split_dataset",
    "write_dataset",
    "write_pcld",
]
