"""voxelflow: dynamic sparse-voxel objects from per-frame conditioning.

A desk-scale library built around sparse spacetime tensors: windowed temporal
attention with hybrid 4D positional encoding, factorized 4D compression,
a temporally aligned VAE, and two-stage conditional flow matching, all
trainable on one CPU with a from-scratch reverse-mode tape.
"""

from .sst import (
    DenseOccupancySequence,
    SparseSpacetimeTensor,
    VoxelCoord4D,
    build_sparse,
    coords_iou,
    densify,
    load_sst,
    save_sst,
    sparsify,
)
from .toydata import ToyAnimationSpec, random_spec, voxelize_toy_animation

__version__ = "0.1.0"

__all__ = [
    "DenseOccupancySequence",
    "SparseSpacetimeTensor",
    "VoxelCoord4D",
    "ToyAnimationSpec",
    "build_sparse",
    "coords_iou",
    "densify",
    "load_sst",
    "random_spec",
    "save_sst",
    "sparsify",
    "voxelize_toy_animation",
    "__version__",
]
