"""Factorized 4D compression for sparse spacetime tokens.

The stack compresses a sparse token set 8x in space (one stride-2 sparse conv)
and 2x in time (packing the two members of each frame pair that share an xyz
position), runs a transformer core with temporal layers, timestep AdaLN and
cross-attention conditioning on the compressed tokens, then decompresses in
reverse order with skip connections.  Active coordinates are never created or
destroyed: the output coordinate set equals the input set exactly.

All ops take and return :class:`~voxelflow.temporal.TokenBatch` values whose
rows are in canonical (t, x, y, z) order; converters to and from
:class:`~voxelflow.sst.SparseSpacetimeTensor` live at the bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DenseTensor
from .errors import (
    MapMismatch,
    OddFrameCount,
    OddResolution,
    ShapeMismatch,
    StateMismatch,
)
from .sst import SparseSpacetimeTensor, from_arrays, pack_keys, unpack_keys
from .temporal import (
    TemporalLayerParams,
    TemporalWindowConfig,
    TokenBatch,
    partition_windows,
    windowed_attention,
)

_T_STRIDE = np.int64(1) << np.int64(30)  # +1 frame in packed-key space


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass
class SparseConv3DBlock:
    """2x2x2 stride-2 sparse conv: one weight matrix per child offset."""

    w: list[DenseTensor]          # 8 x [C_in, C_out]
    bias: DenseTensor             # [C_out]

    @staticmethod
    def create(rng: ad.InitRng, c_in: int, c_out: int) -> "SparseConv3DBlock":
        w = [
            DenseTensor(ad.kaiming_uniform(rng, (c_in, c_out), 8 * c_in),
                        requires_grad=True)
            for _ in range(8)
        ]
        bias = DenseTensor(np.zeros(c_out, np.float32), requires_grad=True)
        return SparseConv3DBlock(w, bias)

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        out = {f"{prefix}.w{o}": self.w[o] for o in range(8)}
        out[f"{prefix}.bias"] = self.bias
        return out


@dataclass
class TemporalConv1DBlock:
    """Width-3 sparse conv along the frame axis, zero-padded, stride 1."""

    w: list[DenseTensor]          # 3 x [C_in, C_out], taps at dt = -1, 0, +1
    bias: DenseTensor

    @staticmethod
    def create(rng: ad.InitRng, c_in: int, c_out: int) -> "TemporalConv1DBlock":
        w = [
            DenseTensor(ad.kaiming_uniform(rng, (c_in, c_out), 3 * c_in),
                        requires_grad=True)
            for _ in range(3)
        ]
        bias = DenseTensor(np.zeros(c_out, np.float32), requires_grad=True)
        return TemporalConv1DBlock(w, bias)

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        out = {f"{prefix}.w{i}": self.w[i] for i in range(3)}
        out[f"{prefix}.bias"] = self.bias
        return out


@dataclass
class LinearProj:
    w: DenseTensor
    b: DenseTensor

    @staticmethod
    def create(rng: ad.InitRng, c_in: int, c_out: int, zero: bool = False) -> "LinearProj":
        if zero:
            wdata = np.zeros((c_in, c_out), np.float32)
        else:
            wdata = ad.kaiming_uniform(rng, (c_in, c_out), c_in)
        return LinearProj(
            DenseTensor(wdata, requires_grad=True),
            DenseTensor(np.zeros(c_out, np.float32), requires_grad=True),
        )

    def __call__(self, x: DenseTensor) -> DenseTensor:
        return ad.linear(x, self.w, self.b)

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


# ---------------------------------------------------------------------------
# compression records
# ---------------------------------------------------------------------------

@dataclass
class DownsampleMap:
    """Everything spatial_upsample needs to restore the pre-downsample set."""

    child_frames: np.ndarray      # [L]
    child_coords: np.ndarray      # [L, 3] at resolution N_in
    child_parent: np.ndarray      # [L] row into the parent token set
    child_offset: np.ndarray      # [L] in [0, 8)
    parent_keys: np.ndarray       # [P] packed keys of the parent set
    skip: DenseTensor             # [L, C] features entering the downsample
    N_in: int


@dataclass
class PackState:
    """Which members of each packed frame pair were active."""

    keys: np.ndarray              # [P] packed keys of the packed set
    flags: np.ndarray             # [P] uint8: 1 first, 2 second, 3 both
    T_in: int

    FIRST = 1
    SECOND = 2


# ---------------------------------------------------------------------------
# compression / decompression ops
# ---------------------------------------------------------------------------

def _coords4(tokens: TokenBatch) -> np.ndarray:
    return np.concatenate(
        [tokens.frames[:, None], tokens.coords], axis=1
    ).astype(np.int64)


def spatial_downsample(
    tokens: TokenBatch, block: SparseConv3DBlock
) -> tuple[TokenBatch, DownsampleMap]:
    """Aggregate 2x2x2 child voxels into parents at resolution N/2.

    Each parent feature is the sum over its active children of the child's
    offset-specific weight applied to the child feature, plus one bias.
    """
    if tokens.N % 2 != 0:
        raise OddResolution(f"N={tokens.N} is odd")
    parent4 = _coords4(tokens)
    parent4[:, 1:] >>= 1
    parent_keys_all = pack_keys(parent4)
    parent_keys, child_parent = np.unique(parent_keys_all, return_inverse=True)
    P = parent_keys.shape[0]
    offsets = (
        (tokens.coords[:, 0] & 1) * 4
        + (tokens.coords[:, 1] & 1) * 2
        + (tokens.coords[:, 2] & 1)
    ).astype(np.int64)

    c_out = block.w[0].shape[1]
    parts, targets = [], []
    for o in range(8):
        rows = np.nonzero(offsets == o)[0]
        if rows.size == 0:
            continue
        h = ad.matmul(ad.take_rows(tokens.features, rows), block.w[o])
        parts.append(h)
        targets.append(child_parent[rows])
    if parts:
        stacked = ad.concat_rows(parts) if len(parts) > 1 else parts[0]
        feats = ad.scatter_add_rows(stacked, np.concatenate(targets), P)
        feats = ad.add_bias(feats, block.bias)
    else:
        feats = DenseTensor(np.zeros((0, c_out), np.float32))

    pc4 = unpack_keys(parent_keys)
    down = TokenBatch(pc4[:, 0], pc4[:, 1:], feats, tokens.N // 2, tokens.T)
    cmap = DownsampleMap(
        child_frames=tokens.frames.copy(),
        child_coords=tokens.coords.copy(),
        child_parent=child_parent,
        child_offset=offsets,
        parent_keys=parent_keys,
        skip=tokens.features,
        N_in=tokens.N,
    )
    return down, cmap


def temporal_conv1d(tokens: TokenBatch, block: TemporalConv1DBlock) -> TokenBatch:
    """Mix features along each voxel's frame line; coordinates unchanged.

    Inactive or out-of-range neighbors contribute zero.
    """
    L = tokens.length
    c_out = block.w[0].shape[1]
    if L == 0:
        return tokens.with_features(DenseTensor(np.zeros((0, c_out), np.float32)))
    keys = pack_keys(_coords4(tokens))
    parts, targets = [], []
    for tap, dt in enumerate((-1, 0, 1)):
        nkeys = keys + np.int64(dt) * _T_STRIDE
        pos = np.searchsorted(keys, nkeys)
        pos_c = np.clip(pos, 0, L - 1)
        valid = keys[pos_c] == nkeys
        rows = np.nonzero(valid)[0]
        if rows.size == 0:
            continue
        h = ad.matmul(ad.take_rows(tokens.features, pos_c[rows]), block.w[tap])
        parts.append(h)
        targets.append(rows)
    stacked = ad.concat_rows(parts) if len(parts) > 1 else parts[0]
    feats = ad.scatter_add_rows(stacked, np.concatenate(targets), L)
    feats = ad.add_bias(feats, block.bias)
    return tokens.with_features(feats)


def temporal_pack(
    tokens: TokenBatch, proj: LinearProj
) -> tuple[TokenBatch, PackState]:
    """Halve the frame count by concatenating frame-pair features per xyz.

    A pair member that is inactive contributes zeros; the projection maps
    the concatenated 2C features back to the output width.
    """
    if tokens.T % 2 != 0:
        raise OddFrameCount(f"T={tokens.T} is odd")
    L = tokens.length
    packed4 = _coords4(tokens)
    member = (packed4[:, 0] & 1).astype(np.int64)
    packed4[:, 0] >>= 1
    keys_all = pack_keys(packed4)
    keys, row_of = np.unique(keys_all, return_inverse=True)
    P = keys.shape[0]
    C = tokens.width

    halves = []
    flags = np.zeros(P, dtype=np.uint8)
    for m in (0, 1):
        rows = np.nonzero(member == m)[0]
        if rows.size:
            h = ad.scatter_add_rows(
                ad.take_rows(tokens.features, rows), row_of[rows], P
            )
        else:
            h = DenseTensor(np.zeros((P, C), np.float32))
        halves.append(h)
        np.bitwise_or.at(flags, row_of[rows], np.uint8(m + 1))

    feats = proj(ad.concat_cols(halves)) if P else DenseTensor(
        np.zeros((0, proj.w.shape[1]), np.float32)
    )
    pc4 = unpack_keys(keys)
    out = TokenBatch(pc4[:, 0], pc4[:, 1:], feats, tokens.N, tokens.T // 2)
    return out, PackState(keys=keys, flags=flags, T_in=tokens.T)


def temporal_unpack(
    tokens: TokenBatch, state: PackState, proj_up: LinearProj
) -> TokenBatch:
    """Restore the pre-pack coordinate set from pack flags.

    Features for the two pair members come from the two halves of the
    up-projection; only originally active members are emitted.
    """
    if tokens.length != state.keys.shape[0] or not np.array_equal(
        pack_keys(_coords4(tokens)), state.keys
    ):
        raise StateMismatch("pack state does not match the packed tensor")
    P = tokens.length
    C2 = proj_up.w.shape[1]
    if C2 % 2 != 0:
        raise ShapeMismatch("unpack projection width must be even")
    C = C2 // 2
    if P == 0:
        return TokenBatch(
            tokens.frames, tokens.coords,
            DenseTensor(np.zeros((0, C), np.float32)), tokens.N, state.T_in,
        )
    up = proj_up(tokens.features)
    first = ad.slice_cols(up, 0, C)
    second = ad.slice_cols(up, C, C2)

    pieces, coord_pieces = [], []
    for m, half in ((0, first), (1, second)):
        rows = np.nonzero(state.flags & (m + 1))[0]
        if rows.size == 0:
            continue
        pieces.append(ad.take_rows(half, rows))
        c4 = np.concatenate(
            [tokens.frames[rows, None] * 2 + m, tokens.coords[rows]], axis=1
        )
        coord_pieces.append(c4)
    feats = ad.concat_rows(pieces) if len(pieces) > 1 else pieces[0]
    coords4 = np.concatenate(coord_pieces, axis=0).astype(np.int64)
    order = np.argsort(pack_keys(coords4), kind="stable")
    feats = ad.take_rows(feats, order)
    coords4 = coords4[order]
    return TokenBatch(
        coords4[:, 0].astype(np.int32), coords4[:, 1:].astype(np.int32),
        feats, tokens.N, state.T_in,
    )


def spatial_upsample(
    tokens: TokenBatch, cmap: DownsampleMap, block: SparseConv3DBlock
) -> TokenBatch:
    """Emit features at the recorded pre-downsample coords, plus skip.

    A transposed-conv analog restricted to recorded children: each child
    receives its offset-specific weight applied to its parent's feature,
    a bias, and the skip feature recorded during compression.
    """
    if tokens.length != cmap.parent_keys.shape[0] or not np.array_equal(
        pack_keys(_coords4(tokens)), cmap.parent_keys
    ):
        raise MapMismatch("coords map does not match the downsampled tensor")
    L = cmap.child_frames.shape[0]
    c_out = block.w[0].shape[1]
    if L == 0:
        return TokenBatch(
            cmap.child_frames, cmap.child_coords,
            DenseTensor(np.zeros((0, c_out), np.float32)), cmap.N_in, tokens.T,
        )
    parts, targets = [], []
    for o in range(8):
        rows = np.nonzero(cmap.child_offset == o)[0]
        if rows.size == 0:
            continue
        h = ad.matmul(
            ad.take_rows(tokens.features, cmap.child_parent[rows]), block.w[o]
        )
        parts.append(h)
        targets.append(rows)
    stacked = ad.concat_rows(parts) if len(parts) > 1 else parts[0]
    feats = ad.scatter_add_rows(stacked, np.concatenate(targets), L)
    feats = ad.add_bias(feats, block.bias)
    feats = ad.add(feats, cmap.skip)
    return TokenBatch(cmap.child_frames, cmap.child_coords, feats, cmap.N_in, tokens.T)


# ---------------------------------------------------------------------------
# transformer core: AdaLN blocks with temporal attention and cross-attention
# ---------------------------------------------------------------------------

_LN_CONST: dict[int, tuple[DenseTensor, DenseTensor]] = {}


def _norm(x: DenseTensor) -> DenseTensor:
    """Layer norm without learned affine (AdaLN provides scale/shift)."""
    width = x.shape[-1]
    if width not in _LN_CONST:
        _LN_CONST[width] = (
            DenseTensor(np.ones(width, np.float32)),
            DenseTensor(np.zeros(width, np.float32)),
        )
    gain, bias = _LN_CONST[width]
    return ad.layer_norm(x, gain, bias)


def timestep_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal features of a scalar flow time in [0, 1]; shape [1, dim]."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = 1000.0 * float(t) * freqs
    out = np.concatenate([np.cos(ang), np.sin(ang)]).astype(np.float32)
    if dim % 2:
        out = np.concatenate([out, np.zeros(1, np.float32)])
    return out[None, :]


@dataclass
class TimeMLP:
    """Two-layer map from sinusoidal timestep features to the AdaLN input."""

    w1: DenseTensor
    b1: DenseTensor
    w2: DenseTensor
    b2: DenseTensor
    dim: int

    @staticmethod
    def create(rng: ad.InitRng, dim: int) -> "TimeMLP":
        return TimeMLP(
            w1=DenseTensor(ad.kaiming_uniform(rng, (dim, dim), dim), requires_grad=True),
            b1=DenseTensor(np.zeros(dim, np.float32), requires_grad=True),
            w2=DenseTensor(ad.kaiming_uniform(rng, (dim, dim), dim), requires_grad=True),
            b2=DenseTensor(np.zeros(dim, np.float32), requires_grad=True),
            dim=dim,
        )

    def embed(self, t: float) -> DenseTensor:
        emb = DenseTensor(timestep_embedding(t, self.dim))
        h = ad.gelu(ad.linear(emb, self.w1, self.b1))
        return ad.linear(h, self.w2, self.b2)

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        return {
            f"{prefix}.w1": self.w1, f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2, f"{prefix}.b2": self.b2,
        }


@dataclass
class CrossAttentionParams:
    """Single-head cross-attention from tokens to per-frame cond vectors."""

    wq: DenseTensor
    bq: DenseTensor
    wk: DenseTensor
    bk: DenseTensor
    wv: DenseTensor
    bv: DenseTensor
    wo: DenseTensor
    bo: DenseTensor

    @staticmethod
    def create(rng: ad.InitRng, width: int, cond_dim: int) -> "CrossAttentionParams":
        def mk(c_in, c_out):
            return DenseTensor(
                ad.kaiming_uniform(rng, (c_in, c_out), c_in), requires_grad=True
            )

        def zb(c):
            return DenseTensor(np.zeros(c, np.float32), requires_grad=True)

        return CrossAttentionParams(
            wq=mk(width, width), bq=zb(width),
            wk=mk(cond_dim, width), bk=zb(width),
            wv=mk(cond_dim, width), bv=zb(width),
            wo=mk(width, width), bo=zb(width),
        )

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        return {
            f"{prefix}.wq": self.wq, f"{prefix}.bq": self.bq,
            f"{prefix}.wk": self.wk, f"{prefix}.bk": self.bk,
            f"{prefix}.wv": self.wv, f"{prefix}.bv": self.bv,
            f"{prefix}.wo": self.wo, f"{prefix}.bo": self.bo,
        }


def cross_attention(
    feats: DenseTensor,
    frames: np.ndarray,
    cond: np.ndarray,
    params: CrossAttentionParams,
    cfg: TemporalWindowConfig,
    T: int,
) -> DenseTensor:
    """Tokens attend to the cond vectors of the frames in their window."""
    L, width = feats.shape
    if cond.shape[0] < T:
        raise ShapeMismatch(f"cond has {cond.shape[0]} frames, tokens span {T}")
    if L == 0:
        return DenseTensor(np.zeros((0, width), np.float32))
    inv_sqrt = 1.0 / np.sqrt(width)
    parts, targets = [], []
    for a, b in partition_windows(T, cfg):
        idx = np.nonzero((frames >= a) & (frames < b))[0]
        if idx.size == 0:
            continue
        cw = DenseTensor(np.asarray(cond[a:b], np.float32))
        q = ad.linear(ad.take_rows(feats, idx), params.wq, params.bq)
        k = ad.linear(cw, params.wk, params.bk)
        v = ad.linear(cw, params.wv, params.bv)
        logits = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt)
        attn = ad.softmax(logits, axis=-1)
        parts.append(ad.linear(ad.matmul(attn, v), params.wo, params.bo))
        targets.append(idx)
    stacked = ad.concat_rows(parts) if len(parts) > 1 else parts[0]
    return ad.scatter_add_rows(stacked, np.concatenate(targets), L)


@dataclass
class DiTBlockParams:
    """One AdaLN transformer block: temporal attn, cross attn, MLP."""

    attn: TemporalLayerParams
    cross: CrossAttentionParams
    mlp_w1: DenseTensor
    mlp_b1: DenseTensor
    mlp_w2: DenseTensor
    mlp_b2: DenseTensor
    adaln_w: DenseTensor          # [time_dim, 9 * width], zero-init
    adaln_b: DenseTensor

    @staticmethod
    def create(
        rng: ad.InitRng, width: int, heads: int, cond_dim: int, time_dim: int,
        mlp_ratio: int = 2,
    ) -> "DiTBlockParams":
        hidden = mlp_ratio * width
        return DiTBlockParams(
            attn=TemporalLayerParams.create(rng, width, heads),
            cross=CrossAttentionParams.create(rng, width, cond_dim),
            mlp_w1=DenseTensor(ad.kaiming_uniform(rng, (width, hidden), width),
                               requires_grad=True),
            mlp_b1=DenseTensor(np.zeros(hidden, np.float32), requires_grad=True),
            mlp_w2=DenseTensor(ad.kaiming_uniform(rng, (hidden, width), hidden),
                               requires_grad=True),
            mlp_b2=DenseTensor(np.zeros(width, np.float32), requires_grad=True),
            adaln_w=DenseTensor(np.zeros((time_dim, 9 * width), np.float32),
                                requires_grad=True),
            adaln_b=DenseTensor(np.zeros(9 * width, np.float32), requires_grad=True),
        )

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        out = self.attn.named(f"{prefix}.attn")
        out.update(self.cross.named(f"{prefix}.cross"))
        out.update({
            f"{prefix}.mlp_w1": self.mlp_w1, f"{prefix}.mlp_b1": self.mlp_b1,
            f"{prefix}.mlp_w2": self.mlp_w2, f"{prefix}.mlp_b2": self.mlp_b2,
            f"{prefix}.adaln_w": self.adaln_w, f"{prefix}.adaln_b": self.adaln_b,
        })
        return out


def _mod_vec(mods: DenseTensor, i: int, width: int) -> DenseTensor:
    return ad.reshape(ad.slice_cols(mods, i * width, (i + 1) * width), (width,))


def dit_block(
    tokens: TokenBatch,
    block: DiTBlockParams,
    time_vec: DenseTensor,
    cond: np.ndarray | None,
    cfg: TemporalWindowConfig,
) -> TokenBatch:
    """x + gate * sub(modulate(norm(x))) for attn, cross-attn, and MLP."""
    width = tokens.width
    mods = ad.linear(time_vec, block.adaln_w, block.adaln_b)  # [1, 9W]
    s = [_mod_vec(mods, i, width) for i in range(9)]

    def modulate(h: DenseTensor, i: int) -> DenseTensor:
        scaled = ad.mul_row(h, ad.add_scalar(s[3 * i], 1.0))
        return ad.add_bias(scaled, s[3 * i + 1])

    x = tokens.features
    h = modulate(_norm(x), 0)
    attn = windowed_attention(h, tokens.frames, block.attn, cfg, tokens.T)
    x = ad.add(x, ad.mul_row(attn, s[2]))

    if cond is not None:
        h = modulate(_norm(x), 1)
        ca = cross_attention(h, tokens.frames, cond, block.cross, cfg, tokens.T)
        x = ad.add(x, ad.mul_row(ca, s[5]))

    h = modulate(_norm(x), 2)
    m = ad.linear(ad.gelu(ad.linear(h, block.mlp_w1, block.mlp_b1)),
                  block.mlp_w2, block.mlp_b2)
    x = ad.add(x, ad.mul_row(m, s[8]))
    return tokens.with_features(x)


# ---------------------------------------------------------------------------
# the full compression network
# ---------------------------------------------------------------------------

@dataclass
class CompNetParams:
    """Down/up convolutions, packing projections, and the core blocks."""

    width: int
    heads: int
    window: int
    time_dim: int
    down: SparseConv3DBlock
    tconv_in: TemporalConv1DBlock
    pack: LinearProj
    blocks: list[DiTBlockParams]
    unpack: LinearProj
    tconv_out: TemporalConv1DBlock
    up: SparseConv3DBlock
    time_mlp: TimeMLP

    @staticmethod
    def create(
        rng: ad.InitRng,
        width: int,
        heads: int = 4,
        depth: int = 2,
        window: int = 2,
        cond_dim: int = 48,
        time_dim: int = 32,
    ) -> "CompNetParams":
        return CompNetParams(
            width=width, heads=heads, window=window, time_dim=time_dim,
            down=SparseConv3DBlock.create(rng, width, width),
            tconv_in=TemporalConv1DBlock.create(rng, width, width),
            pack=LinearProj.create(rng, 2 * width, width),
            blocks=[
                DiTBlockParams.create(rng, width, heads, cond_dim, time_dim)
                for _ in range(depth)
            ],
            unpack=LinearProj.create(rng, width, 2 * width),
            tconv_out=TemporalConv1DBlock.create(rng, width, width),
            up=SparseConv3DBlock.create(rng, width, width),
            time_mlp=TimeMLP.create(rng, time_dim),
        )

    def named(self, prefix: str = "compnet") -> dict[str, DenseTensor]:
        out = self.down.named(f"{prefix}.down")
        out.update(self.tconv_in.named(f"{prefix}.tconv_in"))
        out.update(self.pack.named(f"{prefix}.pack"))
        for i, blk in enumerate(self.blocks):
            out.update(blk.named(f"{prefix}.block{i}"))
        out.update(self.unpack.named(f"{prefix}.unpack"))
        out.update(self.tconv_out.named(f"{prefix}.tconv_out"))
        out.update(self.up.named(f"{prefix}.up"))
        out.update(self.time_mlp.named(f"{prefix}.time"))
        return out

    def time_embed(self, t: float) -> DenseTensor:
        return self.time_mlp.embed(t)


def pair_average_cond(cond: np.ndarray) -> np.ndarray:
    """Average conditioning vectors of each (2t, 2t+1) frame pair."""
    T = cond.shape[0]
    if T % 2 != 0:
        raise OddFrameCount(f"conditioning has odd frame count {T}")
    return 0.5 * (cond[0::2] + cond[1::2])


def compnet_forward(
    tokens: TokenBatch,
    params: CompNetParams,
    timestep: float,
    cond: np.ndarray | None,
) -> TokenBatch:
    """Compress, run the conditioned core, decompress with skips.

    The output coordinate set equals the input coordinate set exactly.
    ``cond`` holds one vector per original frame and is pair-averaged to
    match the packed frame axis.
    """
    if tokens.N % 2 != 0:
        raise OddResolution(f"N={tokens.N} is odd")
    if tokens.T % 2 != 0:
        raise OddFrameCount(f"T={tokens.T} is odd")
    if tokens.length == 0:
        return tokens
    x, cmap = spatial_downsample(tokens, params.down)
    x = temporal_conv1d(x, params.tconv_in)
    x, pstate = temporal_pack(x, params.pack)

    tvec = params.time_embed(timestep)
    cond_half = None
    if cond is not None:
        if cond.shape[0] != tokens.T:
            raise ShapeMismatch(
                f"cond frames {cond.shape[0]} != T {tokens.T}"
            )
        cond_half = pair_average_cond(np.asarray(cond, np.float32))
    for i, blk in enumerate(params.blocks):
        cfg = TemporalWindowConfig(params.window,
                                   0 if i % 2 == 0 else params.window // 2)
        x = dit_block(x, blk, tvec, cond_half, cfg)

    x = temporal_unpack(x, pstate, params.unpack)
    x = temporal_conv1d(x, params.tconv_out)
    x = spatial_upsample(x, cmap, params.up)
    return x


# ---------------------------------------------------------------------------
# converters
# ---------------------------------------------------------------------------

def tokens_from_sst(sst: SparseSpacetimeTensor, requires_grad: bool = False) -> TokenBatch:
    return TokenBatch(
        frames=sst.coords[:, 0].astype(np.int64),
        coords=sst.coords[:, 1:].astype(np.int64),
        features=DenseTensor(sst.features.copy(), requires_grad=requires_grad),
        N=sst.N,
        T=sst.T,
    )


def sst_from_tokens(tokens: TokenBatch) -> SparseSpacetimeTensor:
    coords4 = np.concatenate([tokens.frames[:, None], tokens.coords], axis=1)
    return from_arrays(coords4, tokens.features.data, tokens.N, tokens.T)
