"""Exception types shared across voxelflow modules.

Every error raised by the library derives from :class:`VoxelFlowError`, so
callers (and the CLI) can distinguish validation failures from genuine bugs.
"""

from __future__ import annotations


class VoxelFlowError(Exception):
    """Base class for all voxelflow errors."""


# --- sparse tensor construction / access ---

class OutOfBounds(VoxelFlowError):
    """A coordinate lies outside the declared (T, N, N, N) bounds."""


class DuplicateCoord(VoxelFlowError):
    """The same (t, x, y, z) coordinate appears more than once."""


class BadFeatureWidth(VoxelFlowError):
    """A feature vector does not have the declared channel count."""


class FrameOutOfRange(VoxelFlowError):
    """Requested frame index is outside [0, T)."""


class ShapeMismatch(VoxelFlowError):
    """Operands have incompatible shapes or grid parameters."""


class SpecOutOfCube(VoxelFlowError):
    """A toy animation leaves the unit cube at some time."""


# --- differentiation ---

class NotScalar(VoxelFlowError):
    """backward() called on a non-scalar tensor."""


class DetachedTensor(VoxelFlowError):
    """backward() called on a tensor that was never recorded on the tape."""


class TapeConsumed(VoxelFlowError):
    """backward() called twice on the same tape."""


# --- positional encodings / attention ---

class BadDim(VoxelFlowError):
    """Encoding width does not satisfy its divisibility constraint."""


class OddDim(VoxelFlowError):
    """Rotary embedding requires an even dimension."""


class WidthMismatch(VoxelFlowError):
    """Token/feature width differs from the configured model width."""


# --- compression ---

class OddResolution(VoxelFlowError):
    """Spatial downsampling requires an even resolution."""


class OddFrameCount(VoxelFlowError):
    """Temporal packing requires an even frame count."""


class StateMismatch(VoxelFlowError):
    """Pack state does not match the tensor being unpacked."""


class MapMismatch(VoxelFlowError):
    """Coordinate map does not match the tensor being upsampled."""


# --- generation / training ---

class EmptyStructure(VoxelFlowError):
    """Generated structure has no active voxels."""


class EmptyDataset(VoxelFlowError):
    """A training loop was given no samples."""


class NonFiniteLoss(VoxelFlowError):
    """Training loss became NaN or infinite."""


# --- metrics ---

class TooFewFrames(VoxelFlowError):
    """Flicker needs at least two frames."""


class TooSmall(VoxelFlowError):
    """Image smaller than the SSIM window."""
