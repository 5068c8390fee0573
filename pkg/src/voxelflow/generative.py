"""Temporally aligned VAE and the two conditional-flow-matching stages.

Stage one (structure) matches a velocity field over a dense low-resolution
occupancy grid per frame; stage two (latents) matches a velocity field over
sparse per-voxel latents on the structure's active set, wrapped in the 4D
compression stack.  Both use rectified-flow paths: x_t = (1-t) x0 + t x1 with
target velocity x1 - x0, integrated by a fixed-step Euler sampler.

The VAE encodes per-voxel features into D-dimensional latents and decodes
back to an occupancy logit plus RGB, preserving the coordinate set; temporal
layers inside it are the switch the temporal-alignment ablation flips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DenseTensor
from .compnet import (
    CompNetParams,
    DiTBlockParams,
    LinearProj,
    TimeMLP,
    compnet_forward,
    dit_block,
    tokens_from_sst,
)
from .errors import EmptyStructure, ShapeMismatch, WidthMismatch
from .sst import DenseOccupancySequence, SparseSpacetimeTensor, from_arrays
from .temporal import (
    TemporalLayerParams,
    TemporalWindowConfig,
    TokenBatch,
    absolute_pe_3d,
    temporal_layer_forward,
)

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


# ---------------------------------------------------------------------------
# conditioning videos
# ---------------------------------------------------------------------------

@dataclass
class ConditioningVideo:
    """Front-view toy renders [T, R, R, 3] plus per-frame embeddings [T, E]."""

    frames: np.ndarray
    embeddings: np.ndarray | None = None

    @property
    def T(self) -> int:
        return int(self.frames.shape[0])

    @property
    def R(self) -> int:
        return int(self.frames.shape[1])


class VideoEmbedder:
    """Frozen seeded linear embedding of 8x8 patches, mean-pooled per frame.

    The projection is fixed at construction (a stand-in for a frozen
    pretrained feature extractor) and shared by every model in a run.
    """

    PATCH = 8

    def __init__(self, dim: int = 48, seed: int = 0x5EED):
        self.dim = dim
        rng = ad.InitRng(seed)
        patch_dim = self.PATCH * self.PATCH * 3
        self.weight = ad.kaiming_uniform(rng, (patch_dim, dim), patch_dim)

    def embed(self, frames: np.ndarray) -> np.ndarray:
        """Per-frame embedding vectors [T, dim] of a [T, R, R, 3] video."""
        frames = np.asarray(frames, dtype=np.float32)
        T, R = frames.shape[0], frames.shape[1]
        p = self.PATCH
        if R % p != 0 or frames.shape[2] != R:
            raise ShapeMismatch(f"video frames must be square with R % {p} == 0")
        n = R // p
        patches = frames.reshape(T, n, p, n, p, 3).transpose(0, 1, 3, 2, 4, 5)
        patches = patches.reshape(T, n * n, p * p * 3)
        return patches.mean(axis=1) @ self.weight

    def video(self, frames: np.ndarray) -> ConditioningVideo:
        return ConditioningVideo(np.asarray(frames, np.float32), self.embed(frames))


# ---------------------------------------------------------------------------
# VAE
# ---------------------------------------------------------------------------

@dataclass
class MLPBlockParams:
    """Pre-norm residual MLP: x + W2 gelu(W1 LN(x))."""

    ln_gain: DenseTensor
    ln_bias: DenseTensor
    w1: DenseTensor
    b1: DenseTensor
    w2: DenseTensor
    b2: DenseTensor

    @staticmethod
    def create(rng: ad.InitRng, width: int, ratio: int = 2) -> "MLPBlockParams":
        hidden = ratio * width
        return MLPBlockParams(
            ln_gain=DenseTensor(np.ones(width, np.float32), requires_grad=True),
            ln_bias=DenseTensor(np.zeros(width, np.float32), requires_grad=True),
            w1=DenseTensor(ad.kaiming_uniform(rng, (width, hidden), width),
                           requires_grad=True),
            b1=DenseTensor(np.zeros(hidden, np.float32), requires_grad=True),
            w2=DenseTensor(ad.kaiming_uniform(rng, (hidden, width), hidden),
                           requires_grad=True),
            b2=DenseTensor(np.zeros(width, np.float32), requires_grad=True),
        )

    def __call__(self, x: DenseTensor) -> DenseTensor:
        h = ad.layer_norm(x, self.ln_gain, self.ln_bias)
        h = ad.linear(ad.gelu(ad.linear(h, self.w1, self.b1)), self.w2, self.b2)
        return ad.add(x, h)

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        return {
            f"{prefix}.ln_gain": self.ln_gain, f"{prefix}.ln_bias": self.ln_bias,
            f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
        }


@dataclass
class VAEConfig:
    in_channels: int = 3
    width: int = 24               # divisible by 6 (positional encoding)
    heads: int = 4
    depth: int = 1
    latent_dim: int = 8
    window: int = 2
    temporal_align: bool = True
    beta: float = 1e-4
    seed: int = 11


@dataclass
class _VAEStack:
    """One half of the VAE: embedding, blocks, output head."""

    embed: LinearProj
    spatial: list[TemporalLayerParams]
    temporal: list[TemporalLayerParams]   # empty when not temporally aligned
    mlp: list[MLPBlockParams]
    head: LinearProj

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        out = self.embed.named(f"{prefix}.embed")
        for i, p in enumerate(self.spatial):
            out.update(p.named(f"{prefix}.spatial{i}"))
        for i, p in enumerate(self.temporal):
            out.update(p.named(f"{prefix}.temporal{i}"))
        for i, p in enumerate(self.mlp):
            out.update(p.named(f"{prefix}.mlp{i}"))
        out.update(self.head.named(f"{prefix}.head"))
        return out


class VAEModel:
    """Per-voxel autoencoder over sparse spacetime features.

    Encoder emits (mean, logvar) per voxel; decoder maps a latent back to an
    occupancy logit plus RGB.  With temporal_align=False every block is
    strictly frame-independent (spatial attention uses single-frame windows),
    which is the ablation baseline.
    """

    def __init__(self, cfg: VAEConfig):
        if cfg.width % 6 != 0:
            raise WidthMismatch(f"VAE width must be divisible by 6, got {cfg.width}")
        self.cfg = cfg
        rng = ad.InitRng(cfg.seed)
        self.encoder = self._stack(rng, cfg.in_channels, 2 * cfg.latent_dim)
        self.decoder = self._stack(rng, cfg.latent_dim, 4)

    def _stack(self, rng: ad.InitRng, c_in: int, c_out: int) -> _VAEStack:
        cfg = self.cfg
        return _VAEStack(
            embed=LinearProj.create(rng, c_in, cfg.width),
            spatial=[TemporalLayerParams.create(rng, cfg.width, cfg.heads)
                     for _ in range(cfg.depth)],
            temporal=[TemporalLayerParams.create(rng, cfg.width, cfg.heads)
                      for _ in range(cfg.depth)] if cfg.temporal_align else [],
            mlp=[MLPBlockParams.create(rng, cfg.width) for _ in range(cfg.depth)],
            head=LinearProj.create(rng, cfg.width, c_out),
        )

    # -- forward --

    def _run(self, stack: _VAEStack, tokens: TokenBatch) -> DenseTensor:
        cfg = self.cfg
        h = stack.embed(tokens.features)
        pe = absolute_pe_3d(tokens.coords, cfg.width)
        h = ad.add(h, DenseTensor(pe))
        x = tokens.with_features(h)
        frame_cfg = TemporalWindowConfig(1, 0)
        for i in range(cfg.depth):
            x = temporal_layer_forward(x, stack.spatial[i], frame_cfg)
            if stack.temporal:
                shift = 0 if i % 2 == 0 else cfg.window // 2
                tw = TemporalWindowConfig(cfg.window, shift)
                x = temporal_layer_forward(x, stack.temporal[i], tw)
            x = x.with_features(stack.mlp[i](x.features))
        return stack.head(x.features)

    def encode_tokens(self, tokens: TokenBatch) -> tuple[DenseTensor, DenseTensor]:
        if tokens.width != self.cfg.in_channels:
            raise WidthMismatch(
                f"expected {self.cfg.in_channels} input channels, got {tokens.width}"
            )
        out = self._run(self.encoder, tokens)
        d = self.cfg.latent_dim
        mean = ad.slice_cols(out, 0, d)
        logvar = ad.clip(ad.slice_cols(out, d, 2 * d), LOGVAR_MIN, LOGVAR_MAX)
        return mean, logvar

    def decode_tokens(self, tokens: TokenBatch) -> DenseTensor:
        if tokens.width != self.cfg.latent_dim:
            raise WidthMismatch(
                f"expected {self.cfg.latent_dim} latent channels, got {tokens.width}"
            )
        return self._run(self.decoder, tokens)

    # -- parameters --

    def named(self) -> dict[str, DenseTensor]:
        out = self.encoder.named("vae.enc")
        out.update(self.decoder.named("vae.dec"))
        return out

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        load_into(self.named(), arrays)


def reparameterize(
    mean: DenseTensor, logvar: DenseTensor, rng: np.random.Generator
) -> DenseTensor:
    """z = mean + exp(logvar / 2) * eps with eps ~ N(0, I)."""
    eps = DenseTensor(rng.standard_normal(mean.shape).astype(np.float32))
    std = ad.exp(ad.scale(logvar, 0.5))
    return ad.add(mean, ad.mul(std, eps))


def kl_per_voxel(mean: DenseTensor, logvar: DenseTensor) -> DenseTensor:
    """Mean over voxels of the per-voxel Gaussian KL to N(0, I).

    Per dimension: 0.5 (mu^2 + sigma^2 - 1 - log sigma^2), summed over the
    latent dimensions.
    """
    n_vox = max(1, mean.shape[0])
    sq = ad.mul(mean, mean)
    var = ad.exp(logvar)
    total = ad.sub(ad.add(sq, var), ad.add_scalar(logvar, 1.0))
    return ad.scale(ad.sum_all(total), 0.5 / n_vox)


def vae_encode(
    model: VAEModel,
    features: SparseSpacetimeTensor,
    rng: np.random.Generator | None = None,
) -> tuple[SparseSpacetimeTensor, SparseSpacetimeTensor]:
    """Encode features to per-voxel (means, logvars); coords preserved.

    Pass an rng to draw a reparameterized sample instead of the mean via
    :func:`reparameterize`; evaluation uses the mean deterministically.
    """
    tokens = tokens_from_sst(features)
    mean, logvar = model.encode_tokens(tokens)
    mk = lambda d: from_arrays(  # noqa: E731
        np.concatenate([tokens.frames[:, None], tokens.coords], axis=1),
        d.data, features.N, features.T,
    )
    return mk(mean), mk(logvar)


def vae_decode(
    model: VAEModel, latents: SparseSpacetimeTensor
) -> SparseSpacetimeTensor:
    """Decode per-voxel latents to an occupancy logit plus RGB (C = 4)."""
    tokens = tokens_from_sst(latents)
    out = model.decode_tokens(tokens)
    return latents.with_features(out.data)


# ---------------------------------------------------------------------------
# flow models
# ---------------------------------------------------------------------------

@dataclass
class StructureFlowConfig:
    grid: int = 16                # N_s, dense per-frame resolution
    patch: int = 4
    width: int = 48               # divisible by 6
    heads: int = 4
    depth: int = 3
    window: int = 2
    cond_dim: int = 48
    time_dim: int = 32
    seed: int = 21


class StructureFlowModel:
    """Velocity field over patchified dense occupancy grids ("structure")."""

    stage = "structure"

    def __init__(self, cfg: StructureFlowConfig):
        if cfg.grid % cfg.patch != 0:
            raise ShapeMismatch(f"grid {cfg.grid} not divisible by patch {cfg.patch}")
        if cfg.width % 6 != 0:
            raise WidthMismatch(f"width must be divisible by 6, got {cfg.width}")
        self.cfg = cfg
        rng = ad.InitRng(cfg.seed)
        p3 = cfg.patch ** 3
        self.embed = LinearProj.create(rng, p3, cfg.width)
        self.blocks = [
            DiTBlockParams.create(rng, cfg.width, cfg.heads, cfg.cond_dim,
                                  cfg.time_dim)
            for _ in range(cfg.depth)
        ]
        self.time_mlp = TimeMLP.create(rng, cfg.time_dim)
        self.final_ln_gain = DenseTensor(np.ones(cfg.width, np.float32),
                                         requires_grad=True)
        self.final_ln_bias = DenseTensor(np.zeros(cfg.width, np.float32),
                                         requires_grad=True)
        self.head = LinearProj.create(rng, cfg.width, p3, zero=True)
        side = cfg.grid // cfg.patch
        self._patch_coords = _grid_coords(side)
        self._pe = absolute_pe_3d(self._patch_coords, cfg.width)

    @property
    def patches_per_frame(self) -> int:
        return (self.cfg.grid // self.cfg.patch) ** 3

    def skeleton(self, T: int) -> TokenBatch:
        """Token layout for a T-frame grid (features start at zero)."""
        P = self.patches_per_frame
        frames = np.repeat(np.arange(T, dtype=np.int64), P)
        coords = np.tile(self._patch_coords, (T, 1))
        feats = DenseTensor(np.zeros((T * P, self.cfg.patch ** 3), np.float32))
        return TokenBatch(frames, coords, feats, self.cfg.grid, T)

    def patchify(self, values: np.ndarray) -> np.ndarray:
        """[T, N, N, N] -> [T * P, patch^3] rows in skeleton order."""
        cfg = self.cfg
        T = values.shape[0]
        n = cfg.grid // cfg.patch
        v = values.reshape(T, n, cfg.patch, n, cfg.patch, n, cfg.patch)
        v = v.transpose(0, 1, 3, 5, 2, 4, 6)
        return v.reshape(T * n ** 3, cfg.patch ** 3).astype(np.float32)

    def unpatchify(self, rows: np.ndarray, T: int) -> np.ndarray:
        cfg = self.cfg
        n = cfg.grid // cfg.patch
        v = rows.reshape(T, n, n, n, cfg.patch, cfg.patch, cfg.patch)
        v = v.transpose(0, 1, 4, 2, 5, 3, 6)
        return v.reshape(T, cfg.grid, cfg.grid, cfg.grid)

    def velocity(
        self, tokens: TokenBatch, t: float, cond: np.ndarray
    ) -> TokenBatch:
        cfg = self.cfg
        h = self.embed(tokens.features)
        h = ad.add(h, DenseTensor(np.tile(self._pe, (tokens.T, 1))))
        x = tokens.with_features(h)
        tvec = self.time_mlp.embed(t)
        for i, blk in enumerate(self.blocks):
            wcfg = TemporalWindowConfig(cfg.window,
                                        0 if i % 2 == 0 else cfg.window // 2)
            x = dit_block(x, blk, tvec, cond, wcfg)
        out = ad.layer_norm(x.features, self.final_ln_gain, self.final_ln_bias)
        return tokens.with_features(self.head(out))

    def named(self) -> dict[str, DenseTensor]:
        out = self.embed.named("gs.embed")
        for i, blk in enumerate(self.blocks):
            out.update(blk.named(f"gs.block{i}"))
        out.update(self.time_mlp.named("gs.time"))
        out["gs.final_ln_gain"] = self.final_ln_gain
        out["gs.final_ln_bias"] = self.final_ln_bias
        out.update(self.head.named("gs.head"))
        return out

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        load_into(self.named(), arrays)


@dataclass
class LatentFlowConfig:
    latent_dim: int = 8
    width: int = 24               # divisible by 6
    heads: int = 4
    depth: int = 2
    window: int = 2
    cond_dim: int = 48
    time_dim: int = 32
    seed: int = 31


class LatentFlowModel:
    """Velocity field over sparse latents, wrapped in the compression stack."""

    stage = "latent"

    def __init__(self, cfg: LatentFlowConfig):
        if cfg.width % 6 != 0:
            raise WidthMismatch(f"width must be divisible by 6, got {cfg.width}")
        self.cfg = cfg
        rng = ad.InitRng(cfg.seed)
        self.embed = LinearProj.create(rng, cfg.latent_dim, cfg.width)
        self.compnet = CompNetParams.create(
            rng, cfg.width, heads=cfg.heads, depth=cfg.depth, window=cfg.window,
            cond_dim=cfg.cond_dim, time_dim=cfg.time_dim,
        )
        self.head = LinearProj.create(rng, cfg.width, cfg.latent_dim, zero=True)

    def velocity(
        self, tokens: TokenBatch, t: float, cond: np.ndarray
    ) -> TokenBatch:
        if tokens.width != self.cfg.latent_dim:
            raise WidthMismatch(
                f"expected {self.cfg.latent_dim} channels, got {tokens.width}"
            )
        h = self.embed(tokens.features)
        pe = absolute_pe_3d(tokens.coords, self.cfg.width)
        h = ad.add(h, DenseTensor(pe))
        x = tokens.with_features(h)
        x = compnet_forward(x, self.compnet, t, cond)
        return tokens.with_features(self.head(x.features))

    def named(self) -> dict[str, DenseTensor]:
        out = self.embed.named("gl.embed")
        out.update(self.compnet.named("gl.compnet"))
        out.update(self.head.named("gl.head"))
        return out

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        load_into(self.named(), arrays)


def _grid_coords(side: int) -> np.ndarray:
    r = np.arange(side, dtype=np.int64)
    gx, gy, gz = np.meshgrid(r, r, r, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)


def load_into(params: dict[str, DenseTensor], arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into an existing parameter dict by name."""
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise ShapeMismatch(
            f"checkpoint mismatch: missing {sorted(missing)[:3]}, "
            f"extra {sorted(extra)[:3]}"
        )
    for name, tensor in params.items():
        arr = arrays[name]
        if arr.shape != tensor.shape:
            raise ShapeMismatch(f"{name}: shape {arr.shape} != {tensor.shape}")
        tensor.data = arr.astype(np.float32).copy()


# ---------------------------------------------------------------------------
# conditional flow matching
# ---------------------------------------------------------------------------

def cfm_loss(model, x1: TokenBatch, cond: np.ndarray | None,
             rng: np.random.Generator) -> DenseTensor:
    """Rectified-flow matching loss for one sample.

    Draws t ~ U(0, 1) then x0 ~ N(0, I) (in that order, so tests can mirror
    the draws), forms x_t = (1 - t) x0 + t x1, and regresses the model's
    velocity onto x1 - x0.
    """
    t = float(rng.uniform())
    x0 = rng.standard_normal(x1.features.shape).astype(np.float32)
    data = x1.features.data
    xt = (1.0 - t) * x0 + t * data
    v_star = DenseTensor(data - x0)
    v = model.velocity(x1.with_features(DenseTensor(xt)), t, cond).features
    diff = ad.sub(v, v_star)
    return ad.mean_all(ad.mul(diff, diff))


def euler_sample(
    model,
    skeleton: TokenBatch,
    steps: int,
    cond: np.ndarray | None,
    rng: np.random.Generator,
) -> TokenBatch:
    """Integrate the learned velocity field from noise with S Euler steps."""
    if steps < 1:
        raise ShapeMismatch(f"need steps >= 1, got {steps}")
    x = rng.standard_normal(skeleton.features.shape).astype(np.float32)
    dt = 1.0 / steps
    for i in range(steps):
        v = model.velocity(skeleton.with_features(DenseTensor(x)), i / steps, cond)
        x = x + dt * v.features.data
    return skeleton.with_features(DenseTensor(x))


# ---------------------------------------------------------------------------
# two-stage generation
# ---------------------------------------------------------------------------

STRUCTURE_LOGIT = 3.0  # occupancy mapped to +/- this logit for flow targets


def occupancy_to_flow_target(occ16: np.ndarray) -> np.ndarray:
    """{0,1} occupancy -> +/-STRUCTURE_LOGIT logits (sigmoid has margin)."""
    return (STRUCTURE_LOGIT * (2.0 * occ16 - 1.0)).astype(np.float32)


def generate_structure(
    video: ConditioningVideo,
    model: StructureFlowModel,
    steps: int = 25,
    rng: np.random.Generator | None = None,
) -> DenseOccupancySequence:
    """Sample a dense occupancy sequence conditioned on a video."""
    rng = rng or np.random.default_rng(0)
    if video.embeddings is None:
        raise ShapeMismatch("conditioning video has no embeddings")
    T = video.T
    skeleton = model.skeleton(T)
    out = euler_sample(model, skeleton, steps, video.embeddings, rng)
    grid = model.unpatchify(out.features.data, T)
    occ = 1.0 / (1.0 + np.exp(-grid))
    return DenseOccupancySequence(occ.astype(np.float32))


def upsample_structure(
    structure: DenseOccupancySequence, N: int, tau: float = 0.5
) -> np.ndarray:
    """Binarize and nearest-neighbor upsample to resolution N; coords [L, 4]."""
    if N % structure.N != 0:
        raise ShapeMismatch(f"N={N} not a multiple of N_s={structure.N}")
    k = N // structure.N
    occ = structure.binarize(tau)
    up = np.repeat(np.repeat(np.repeat(occ, k, axis=1), k, axis=2), k, axis=3)
    t, x, y, z = np.nonzero(up)
    return np.stack([t, x, y, z], axis=1).astype(np.int64)


def generate_latents(
    structure: DenseOccupancySequence,
    video: ConditioningVideo,
    model: LatentFlowModel,
    N: int,
    steps: int = 25,
    rng: np.random.Generator | None = None,
    tau: float = 0.5,
) -> SparseSpacetimeTensor:
    """Sample per-voxel latents on the structure's (upsampled) active set."""
    rng = rng or np.random.default_rng(0)
    if video.embeddings is None:
        raise ShapeMismatch("conditioning video has no embeddings")
    coords4 = upsample_structure(structure, N, tau)
    if coords4.shape[0] == 0:
        raise EmptyStructure("structure has no active voxels")
    D = model.cfg.latent_dim
    skeleton = TokenBatch(
        frames=coords4[:, 0],
        coords=coords4[:, 1:],
        features=DenseTensor(np.zeros((coords4.shape[0], D), np.float32)),
        N=N,
        T=structure.T,
    )
    out = euler_sample(model, skeleton, steps, video.embeddings, rng)
    return from_arrays(coords4, out.features.data, N, structure.T)
