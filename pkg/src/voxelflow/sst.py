"""Sparse spacetime tensors.

The core data structure of the package: a set of active voxels on a
T x N x N x N grid, each carrying a feature vector of width C.  Entries are
kept sorted by lexicographic (t, x, y, z); coordinates are bit-packed into a
single int64 key (10 bits per spatial axis, 12 bits for time) so lookups are
O(1) through a hash map and the packed keys sort in the same order as the
coordinate tuples.

Tensors are immutable after construction: the backing numpy arrays are marked
read-only and may be shared freely across threads.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BadFeatureWidth,
    DuplicateCoord,
    FrameOutOfRange,
    OutOfBounds,
    ShapeMismatch,
)

_AXIS_BITS = 10
_T_BITS = 12
MAX_RESOLUTION = 1 << _AXIS_BITS  # 1024
MAX_FRAMES = 1 << _T_BITS         # 4096

# key layout (low to high): z[0:10) y[10:20) x[20:30) t[30:42)
_Z_SHIFT, _Y_SHIFT, _X_SHIFT, _T_SHIFT = 0, 10, 20, 30
T_KEY_STRIDE = np.int64(1) << _T_SHIFT  # +1 frame in key space


class VoxelCoord4D(NamedTuple):
    """An active voxel's (t, x, y, z) index; tuple order is the total order."""

    t: int
    x: int
    y: int
    z: int


class SparseFrame(NamedTuple):
    """One frame of a sparse tensor: spatial coords [m, 3] and features [m, C]."""

    coords: np.ndarray
    features: np.ndarray


def pack_keys(coords: np.ndarray) -> np.ndarray:
    """Bit-pack integer coordinates [L, 4] into sortable int64 keys."""
    c = np.asarray(coords, dtype=np.int64)
    return (
        (c[:, 0] << _T_SHIFT)
        | (c[:, 1] << _X_SHIFT)
        | (c[:, 2] << _Y_SHIFT)
        | (c[:, 3] << _Z_SHIFT)
    )


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_keys`; returns int32 coords [L, 4]."""
    k = np.asarray(keys, dtype=np.int64)
    mask = (1 << _AXIS_BITS) - 1
    out = np.empty((k.shape[0], 4), dtype=np.int32)
    out[:, 0] = k >> _T_SHIFT
    out[:, 1] = (k >> _X_SHIFT) & mask
    out[:, 2] = (k >> _Y_SHIFT) & mask
    out[:, 3] = k & mask
    return out


class SparseSpacetimeTensor:
    """Sorted, deduplicated set of (coord, feature) entries on a 4D grid.

    Attributes:
        N: voxels per spatial axis.
        T: frame count.
        C: feature width.
        coords: int32 array [L, 4] of (t, x, y, z), sorted lexicographically.
        features: float32 array [L, C].
    """

    __slots__ = ("N", "T", "C", "coords", "features", "_keys", "_index")

    def __init__(self, coords: np.ndarray, features: np.ndarray, N: int, T: int):
        self.N = int(N)
        self.T = int(T)
        self.coords = np.ascontiguousarray(coords, dtype=np.int32)
        self.features = np.ascontiguousarray(features, dtype=np.float32)
        self.C = int(self.features.shape[1]) if self.features.ndim == 2 else 0
        self.coords.setflags(write=False)
        self.features.setflags(write=False)
        self._keys = pack_keys(self.coords)
        self._keys.setflags(write=False)
        self._index: dict[int, int] | None = None

    # -- basic protocol --

    @property
    def L(self) -> int:
        return self.coords.shape[0]

    def __len__(self) -> int:
        return self.L

    def __repr__(self) -> str:
        return (
            f"SparseSpacetimeTensor(N={self.N}, T={self.T}, C={self.C}, L={self.L})"
        )

    @property
    def keys(self) -> np.ndarray:
        """Packed int64 keys, sorted ascending."""
        return self._keys

    def lookup(self, coord: Sequence[int]) -> int:
        """Row index of a coordinate, or -1 if inactive."""
        if self._index is None:
            self._index = {int(k): i for i, k in enumerate(self._keys)}
        t, x, y, z = coord
        key = (int(t) << _T_SHIFT) | (int(x) << _X_SHIFT) | (int(y) << _Y_SHIFT) | int(z)
        return self._index.get(key, -1)

    def same_coords(self, other: "SparseSpacetimeTensor") -> bool:
        return (
            self.N == other.N
            and self.T == other.T
            and self.L == other.L
            and bool(np.array_equal(self.coords, other.coords))
        )

    def with_features(self, features: np.ndarray) -> "SparseSpacetimeTensor":
        """Same coordinate set, new feature matrix (width may differ)."""
        feats = np.asarray(features, dtype=np.float32)
        if feats.shape[0] != self.L:
            raise ShapeMismatch(f"feature rows {feats.shape[0]} != L {self.L}")
        return SparseSpacetimeTensor(self.coords, feats, self.N, self.T)

    # -- spec operations --

    def frame_slice(self, t: int) -> SparseFrame:
        """Entries of frame ``t`` (coords [m, 3], features [m, C]), order kept."""
        if not 0 <= t < self.T:
            raise FrameOutOfRange(f"frame {t} not in [0, {self.T})")
        sel = self.coords[:, 0] == t
        return SparseFrame(self.coords[sel, 1:], self.features[sel])


class DenseOccupancySequence:
    """Per-frame dense occupancy values in [0, 1] on a T x N^3 grid."""

    __slots__ = ("N", "T", "values")

    def __init__(self, values: np.ndarray):
        v = np.ascontiguousarray(values, dtype=np.float32)
        if v.ndim != 4 or v.shape[1] != v.shape[2] or v.shape[2] != v.shape[3]:
            raise ShapeMismatch(f"expected [T, N, N, N], got {v.shape}")
        if not np.isfinite(v).all():
            raise ShapeMismatch("occupancy values must be finite")
        self.values = v
        self.T = int(v.shape[0])
        self.N = int(v.shape[1])

    def binarize(self, tau: float = 0.5) -> np.ndarray:
        """Boolean occupancy at threshold tau."""
        return self.values >= tau

    def active_coords(self, tau: float = 0.5) -> np.ndarray:
        """Sorted int32 coords [L, 4] of voxels with value >= tau."""
        t, x, y, z = np.nonzero(self.binarize(tau))
        coords = np.stack([t, x, y, z], axis=1).astype(np.int32)
        return coords  # np.nonzero already yields lexicographic order

    def count(self, tau: float = 0.5) -> int:
        return int(self.binarize(tau).sum())


def _validate_bounds(coords: np.ndarray, N: int, T: int) -> None:
    if coords.shape[0] == 0:
        return
    bad_t = (coords[:, 0] < 0) | (coords[:, 0] >= T)
    bad_s = (coords[:, 1:] < 0).any(axis=1) | (coords[:, 1:] >= N).any(axis=1)
    bad = bad_t | bad_s
    if bad.any():
        i = int(np.argmax(bad))
        raise OutOfBounds(f"coordinate {tuple(coords[i])} outside T={T}, N={N}")


def from_arrays(
    coords: np.ndarray, features: np.ndarray, N: int, T: int
) -> SparseSpacetimeTensor:
    """Construct a tensor from coordinate/feature arrays.

    Sorts by (t, x, y, z), validates bounds, rejects duplicates and
    non-finite features.
    """
    if N < 1 or T < 1:
        raise ShapeMismatch(f"need N >= 1 and T >= 1, got N={N}, T={T}")
    if N > MAX_RESOLUTION or T > MAX_FRAMES:
        raise ShapeMismatch(
            f"N <= {MAX_RESOLUTION} and T <= {MAX_FRAMES} required for key packing"
        )
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] != coords.shape[0]:
        raise BadFeatureWidth(
            f"features must be [L, C] with L={coords.shape[0]}, got {features.shape}"
        )
    if not np.isfinite(features).all():
        raise BadFeatureWidth("features must be finite")
    _validate_bounds(coords, N, T)
    keys = pack_keys(coords)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    if keys.shape[0] > 1:
        dup = np.nonzero(np.diff(keys) == 0)[0]
        if dup.size:
            c = unpack_keys(keys[dup[:1]])[0]
            raise DuplicateCoord(f"coordinate {tuple(int(v) for v in c)} repeated")
    return SparseSpacetimeTensor(coords[order], features[order], N, T)


def build_sparse(
    entries: Iterable[tuple[Sequence[int], Sequence[float]]],
    N: int,
    T: int,
    C: int,
) -> SparseSpacetimeTensor:
    """Build a tensor from (coord, feature) pairs.

    Duplicate coordinates are an error, not merged: upstream code must
    aggregate features before construction.
    """
    if C < 1:
        raise BadFeatureWidth(f"need C >= 1, got {C}")
    entries = list(entries)
    coords = np.zeros((len(entries), 4), dtype=np.int64)
    feats = np.zeros((len(entries), C), dtype=np.float32)
    for i, (coord, feat) in enumerate(entries):
        coord = tuple(int(v) for v in coord)
        if len(coord) != 4:
            raise OutOfBounds(f"coordinate {coord} is not 4D")
        fv = np.asarray(feat, dtype=np.float32).reshape(-1)
        if fv.shape[0] != C:
            raise BadFeatureWidth(f"feature width {fv.shape[0]}, want {C}")
        coords[i] = coord
        feats[i] = fv
    return from_arrays(coords, feats, N, T)


def empty(N: int, T: int, C: int) -> SparseSpacetimeTensor:
    return from_arrays(np.zeros((0, 4), np.int64), np.zeros((0, C), np.float32), N, T)


FeatureSource = Callable[[np.ndarray], np.ndarray]


def sparsify(
    dense: DenseOccupancySequence,
    tau: float = 0.5,
    features: FeatureSource | float | None = None,
) -> SparseSpacetimeTensor:
    """Active set of a dense occupancy sequence, with features attached.

    ``features`` is either a constant (default 1.0, width 1) or a callable
    mapping voxel-center positions [m, 3] in the unit cube to feature rows.
    """
    if not 0.0 < tau < 1.0:
        raise ShapeMismatch(f"threshold must lie in (0, 1), got {tau}")
    coords = dense.active_coords(tau)
    if features is None or isinstance(features, (int, float)):
        value = 1.0 if features is None else float(features)
        feats = np.full((coords.shape[0], 1), value, dtype=np.float32)
    else:
        centers = (coords[:, 1:].astype(np.float64) + 0.5) / dense.N
        feats = np.asarray(features(centers), dtype=np.float32)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.shape[0] != coords.shape[0]:
            raise BadFeatureWidth("feature source returned wrong row count")
    return SparseSpacetimeTensor(coords, feats, dense.N, dense.T)


def densify(sst: SparseSpacetimeTensor) -> DenseOccupancySequence:
    """Binary occupancy sequence of the tensor's active set."""
    values = np.zeros((sst.T, sst.N, sst.N, sst.N), dtype=np.float32)
    c = sst.coords
    values[c[:, 0], c[:, 1], c[:, 2], c[:, 3]] = 1.0
    return DenseOccupancySequence(values)


def coords_iou(a: SparseSpacetimeTensor, b: SparseSpacetimeTensor) -> float:
    """Intersection-over-union of the two active coordinate sets.

    Defined as 1.0 when both tensors are empty.
    """
    if a.N != b.N or a.T != b.T:
        raise ShapeMismatch(
            f"grid mismatch: ({a.N}, {a.T}) vs ({b.N}, {b.T})"
        )
    if a.L == 0 and b.L == 0:
        return 1.0
    inter = np.intersect1d(a.keys, b.keys, assume_unique=True).size
    union = a.L + b.L - inter
    return float(inter) / float(union)


def occupancy_iou(
    a: DenseOccupancySequence, b: DenseOccupancySequence, tau: float = 0.5
) -> float:
    """IoU between two binarized occupancy sequences (1.0 when both empty)."""
    if a.values.shape != b.values.shape:
        raise ShapeMismatch(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    av, bv = a.binarize(tau), b.binarize(tau)
    union = int(np.logical_or(av, bv).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(av, bv).sum()) / union


# -- .sst binary format --
#
# magic "SS4D", u16 version=1, u16 flags, u32 N, u32 T, u32 C, u64 L,
# then L records of (u16 t, u16 x, u16 y, u16 z, C * f32). Little-endian.

_MAGIC = b"SS4D"
_HEADER = struct.Struct("<4sHHIIIQ")
SST_VERSION = 1


def save_sst(sst: SparseSpacetimeTensor, path: str, flags: int = 0) -> None:
    """Write a tensor in the .sst binary format."""
    header = _HEADER.pack(_MAGIC, SST_VERSION, flags, sst.N, sst.T, sst.C, sst.L)
    coords = sst.coords.astype("<u2")
    feats = sst.features.astype("<f4")
    record = np.zeros(sst.L, dtype=[("c", "<u2", (4,)), ("f", "<f4", (sst.C,))])
    record["c"] = coords
    record["f"] = feats
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(record.tobytes())


def load_sst(path: str) -> SparseSpacetimeTensor:
    """Read a .sst file written by :func:`save_sst`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ShapeMismatch(f"{path}: truncated header")
    magic, version, _flags, N, T, C, L = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ShapeMismatch(f"{path}: bad magic {magic!r}")
    if version != SST_VERSION:
        raise ShapeMismatch(f"{path}: unsupported version {version}")
    record = np.dtype([("c", "<u2", (4,)), ("f", "<f4", (C,))])
    body = raw[_HEADER.size:]
    if len(body) != L * record.itemsize:
        raise ShapeMismatch(f"{path}: body length {len(body)} != {L} records")
    rec = np.frombuffer(body, dtype=record)
    coords = rec["c"].astype(np.int64).reshape(L, 4)
    feats = rec["f"].astype(np.float32).reshape(L, C)
    return from_arrays(coords, feats, N, T)
