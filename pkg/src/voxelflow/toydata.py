"""Procedural toy 4D ground truth.

A :class:`ToyAnimationSpec` describes a primitive (sphere, box, or a pair of
capsules) moving and deforming inside the unit cube over normalized time
s in [0, 1].  The spec is fully parametric: signed distance, color, motion,
and validity are all analytic, so voxelizations can be checked voxel-for-voxel
against an independent scan.

Frame t of a T-frame clip is sampled at s = t / (T - 1) (s = 0 when T = 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeMismatch, SpecOutOfCube
from .sst import DenseOccupancySequence

KINDS = ("sphere", "box", "capsule-pair")

# box half-extents are anisotropic so rotation is visible
_BOX_ASPECT = np.array([1.0, 0.7, 0.45])


@dataclass(frozen=True)
class ToyAnimationSpec:
    """Analytic description of one animated primitive.

    base_size is the primitive's nominal diameter as a fraction of the unit
    cube.  translation holds per-axis sine amplitudes, rotation_rate is in
    turns over the clip (about the z axis), scale_oscillation is a relative
    size wobble.  Colors are a smooth parametric function of position.
    """

    kind: str = "sphere"
    base_size: float = 0.5
    translation: tuple[float, float, float] = (0.12, 0.08, 0.0)
    rotation_rate: float = 0.25
    scale_oscillation: float = 0.0
    phases: tuple[float, float, float] = (0.0, 0.25, 0.5)
    color_freq: tuple[float, ...] = (3.0, 5.0, 2.0, 4.0, 1.0, 6.0, 2.5, 3.5, 1.5)
    color_phase: tuple[float, float, float] = (0.0, 2.0, 4.0)

    def scale(self, s: float) -> float:
        return 1.0 + self.scale_oscillation * math.sin(2.0 * math.pi * s)

    def center(self, s: float) -> np.ndarray:
        amp = np.asarray(self.translation, dtype=np.float64)
        ph = np.asarray(self.phases, dtype=np.float64)
        return 0.5 + amp * np.sin(2.0 * math.pi * (s + ph))

    def angle(self, s: float) -> float:
        return 2.0 * math.pi * self.rotation_rate * s

    # -- geometry --

    def sdf(self, points: np.ndarray, s: float) -> np.ndarray:
        """Signed distance of points [..., 3] at normalized time s."""
        p = np.asarray(points, dtype=np.float64) - self.center(s)
        size = self.base_size * self.scale(s)
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=-1) - 0.5 * size
        # rotate into the primitive's frame (inverse rotation about z)
        c, sn = math.cos(self.angle(s)), math.sin(self.angle(s))
        q = np.empty_like(p)
        q[..., 0] = c * p[..., 0] + sn * p[..., 1]
        q[..., 1] = -sn * p[..., 0] + c * p[..., 1]
        q[..., 2] = p[..., 2]
        if self.kind == "box":
            half = 0.5 * size * _BOX_ASPECT
            d = np.abs(q) - half
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
            inside = np.minimum(d.max(axis=-1), 0.0)
            return outside + inside
        if self.kind == "capsule-pair":
            r = size / 6.0
            half_len = 0.5 * size - r
            offset = size / 4.0
            d1 = _capsule_z(q - np.array([offset, 0.0, 0.0]), half_len, r)
            d2 = _capsule_z(q + np.array([offset, 0.0, 0.0]), half_len, r)
            return np.minimum(d1, d2)
        raise ShapeMismatch(f"unknown primitive kind {self.kind!r}")

    def max_extent(self, s: float) -> float:
        """Radius of a sphere circumscribing the primitive at time s."""
        size = self.base_size * self.scale(s)
        if self.kind == "sphere":
            return 0.5 * size
        if self.kind == "box":
            return 0.5 * size * float(np.linalg.norm(_BOX_ASPECT))
        r = size / 6.0
        half_len = 0.5 * size - r
        offset = size / 4.0
        return math.sqrt(offset * offset + half_len * half_len) + r

    def color(self, points: np.ndarray) -> np.ndarray:
        """Smooth position -> RGB map with values in [0, 1]; shape [..., 3]."""
        p = np.asarray(points, dtype=np.float64)
        freq = np.asarray(self.color_freq, dtype=np.float64).reshape(3, 3)
        phase = np.asarray(self.color_phase, dtype=np.float64)
        arg = p @ freq.T + phase
        return (0.5 + 0.5 * np.sin(2.0 * math.pi * 0.5 * arg)).astype(np.float64)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ToyAnimationSpec":
        d = dict(d)
        for key in ("translation", "phases", "color_freq", "color_phase"):
            if key in d:
                d[key] = tuple(d[key])
        return ToyAnimationSpec(**d)


def _capsule_z(p: np.ndarray, half_len: float, radius: float) -> np.ndarray:
    """SDF of a z-aligned capsule centered at the origin."""
    z = np.clip(p[..., 2], -half_len, half_len)
    d = p.copy()
    d[..., 2] -= z
    return np.linalg.norm(d, axis=-1) - radius


def validate_spec(spec: ToyAnimationSpec, samples: int = 257) -> None:
    """Raise SpecOutOfCube unless the primitive stays inside the unit cube."""
    if spec.kind not in KINDS:
        raise ShapeMismatch(f"unknown primitive kind {spec.kind!r}")
    for s in np.linspace(0.0, 1.0, samples):
        c = spec.center(float(s))
        ext = spec.max_extent(float(s))
        if (c - ext < 0.0).any() or (c + ext > 1.0).any():
            raise SpecOutOfCube(
                f"primitive leaves the unit cube at s={s:.4f} "
                f"(center {np.round(c, 3)}, extent {ext:.3f})"
            )


def random_spec(rng: np.random.Generator, kind: str | None = None) -> ToyAnimationSpec:
    """Draw a valid random animation spec (rejection-free by construction)."""
    kind = kind or KINDS[rng.integers(len(KINDS))]
    base_size = float(rng.uniform(0.38, 0.55))
    # leave (0.5 - extent) of translation headroom on each axis
    probe = ToyAnimationSpec(kind=kind, base_size=base_size, scale_oscillation=0.0)
    headroom = 0.5 - probe.max_extent(0.0) * 1.12  # 1.12 covers scale wobble
    amp = rng.uniform(0.3, 0.9, size=3) * max(headroom, 0.0)
    spec = ToyAnimationSpec(
        kind=kind,
        base_size=base_size,
        translation=tuple(float(a) for a in amp),
        rotation_rate=float(rng.uniform(-0.5, 0.5)),
        scale_oscillation=float(rng.uniform(0.0, 0.1)),
        phases=tuple(float(p) for p in rng.uniform(0.0, 1.0, size=3)),
        color_freq=tuple(float(f) for f in rng.uniform(0.5, 6.0, size=9)),
        color_phase=tuple(float(p) for p in rng.uniform(0.0, 2.0 * math.pi, size=3)),
    )
    validate_spec(spec)
    return spec


def frame_times(T: int) -> np.ndarray:
    """Normalized sample times for a T-frame clip."""
    if T == 1:
        return np.zeros(1)
    return np.arange(T, dtype=np.float64) / (T - 1)


def voxel_centers(N: int) -> np.ndarray:
    """Grid of voxel centers [N, N, N, 3] in the unit cube."""
    axis = (np.arange(N, dtype=np.float64) + 0.5) / N
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def surface_filter(occ: np.ndarray) -> np.ndarray:
    """Keep occupied voxels whose 6-neighborhood has an unoccupied voxel.

    Voxels outside the grid count as unoccupied, so boundary voxels with an
    exposed face survive.
    """
    occ = occ.astype(bool)
    padded = np.pad(occ, 1, constant_values=False)
    all_neighbors = np.ones_like(occ)
    for axis in range(3):
        for step in (-1, 1):
            all_neighbors &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    return occ & ~all_neighbors


def voxelize_toy_animation(
    spec: ToyAnimationSpec, N: int, T: int, surface_only: bool = True
) -> DenseOccupancySequence:
    """Binary occupancy of the animated primitive on a T x N^3 grid.

    A voxel is occupied iff its center has SDF <= 0 at the frame's time.
    By default only the coarse surface is kept (solid fill via the flag).
    """
    if N < 4:
        raise ShapeMismatch(f"need N >= 4, got {N}")
    if T < 1:
        raise ShapeMismatch(f"need T >= 1, got {T}")
    validate_spec(spec)
    centers = voxel_centers(N)
    values = np.zeros((T, N, N, N), dtype=np.float32)
    for t, s in enumerate(frame_times(T)):
        occ = spec.sdf(centers, float(s)) <= 0.0
        if surface_only:
            occ = surface_filter(occ)
        values[t] = occ.astype(np.float32)
    return DenseOccupancySequence(values)


def sdf_normals(spec: ToyAnimationSpec, points: np.ndarray, s: float,
                eps: float = 1e-4) -> np.ndarray:
    """Outward unit normals from central SDF differences at points [..., 3]."""
    p = np.asarray(points, dtype=np.float64)
    grad = np.empty_like(p)
    for axis in range(3):
        d = np.zeros(3)
        d[axis] = eps
        grad[..., axis] = (spec.sdf(p + d, s) - spec.sdf(p - d, s)) / (2 * eps)
    norm = np.linalg.norm(grad, axis=-1, keepdims=True)
    return grad / np.maximum(norm, 1e-12)
