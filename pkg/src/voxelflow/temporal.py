"""Cross-frame attention with shifted temporal windows and hybrid positions.

Tokens of all frames inside a window are gathered into one ragged sequence
(no padding), attended jointly with rotary embeddings on the temporal index,
and scattered back.  Spatial coordinates get sinusoidal absolute encodings
added once at model input; time gets 1D RoPE inside every attention call, so
attention logits depend on relative frame offsets only.

Windows never wrap around the sequence boundary: the shifted configuration
produces a short first window instead, and alternating unshifted/shifted
layers connects every pair of adjacent frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DenseTensor
from .errors import BadDim, OddDim, WidthMismatch


# ---------------------------------------------------------------------------
# positional encodings
# ---------------------------------------------------------------------------

def absolute_pe_3d(p: np.ndarray, dim: int, base: float = 10000.0) -> np.ndarray:
    """Sinusoidal encoding of integer 3D coordinates.

    p has shape [..., 3]; the result has shape [..., dim] with dim/3 channels
    per axis, sin/cos interleaved.  dim must be divisible by 6.
    """
    if dim % 6 != 0:
        raise BadDim(f"absolute_pe_3d needs dim divisible by 6, got {dim}")
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise BadDim(f"expected [..., 3] coordinates, got {p.shape}")
    per_axis = dim // 3
    freqs = base ** (-2.0 * np.arange(per_axis // 2) / per_axis)
    out = np.empty(p.shape[:-1] + (dim,), dtype=np.float32)
    for axis in range(3):
        angle = p[..., axis, None] * freqs
        block = out[..., axis * per_axis:(axis + 1) * per_axis]
        block[..., 0::2] = np.sin(angle)
        block[..., 1::2] = np.cos(angle)
    return out


def rope_freqs(dim: int, base: float = 10000.0) -> np.ndarray:
    """Per-pair rotation frequencies theta_j = base^(-2j/dim)."""
    if dim % 2 != 0:
        raise OddDim(f"rotary dim must be even, got {dim}")
    return base ** (-2.0 * np.arange(dim // 2) / dim)


def rope_tables(
    positions: np.ndarray, dim: int, base: float = 10000.0
) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables [n, dim/2] for integer positions [n]."""
    angle = np.asarray(positions, dtype=np.float64)[:, None] * rope_freqs(dim, base)
    return np.cos(angle), np.sin(angle)


def rope_1d(
    q: np.ndarray, k: np.ndarray, t_q: int, t_k: int, base: float = 10000.0
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a query/key pair to positions t_q and t_k.

    Interleaved (even, odd) coordinate pairs are rotated by t * theta_j; the
    inner product of the results depends on t_q - t_k only.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape or q.ndim != 1:
        raise OddDim(f"expected equal 1D shapes, got {q.shape} vs {k.shape}")
    freqs = rope_freqs(q.shape[0], base)

    def rot(v: np.ndarray, t: int) -> np.ndarray:
        c, s = np.cos(t * freqs), np.sin(t * freqs)
        out = np.empty_like(v)
        out[0::2] = v[0::2] * c - v[1::2] * s
        out[1::2] = v[0::2] * s + v[1::2] * c
        return out

    return rot(q, t_q), rot(k, t_k)


# ---------------------------------------------------------------------------
# temporal windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TemporalWindowConfig:
    """Frames-per-window and the alternating shift (0 or window // 2)."""

    window: int
    shift: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise BadDim(f"window must be >= 1, got {self.window}")
        if not 0 <= self.shift < self.window:
            raise BadDim(f"need 0 <= shift < window, got shift={self.shift}")

    def shifted(self) -> "TemporalWindowConfig":
        return TemporalWindowConfig(self.window, self.window // 2)

    def unshifted(self) -> "TemporalWindowConfig":
        return TemporalWindowConfig(self.window, 0)


def partition_windows(T: int, cfg: TemporalWindowConfig) -> list[tuple[int, int]]:
    """Disjoint frame ranges covering [0, T) exactly once.

    Unshifted: [0, w), [w, 2w), ...  Shifted: a short first range [0, w - s)
    followed by width-w ranges and a remainder; no wrap-around.
    """
    if T < 1:
        raise BadDim(f"need T >= 1, got {T}")
    w, s = cfg.window, cfg.shift
    bounds = [0, min(w - s if s else w, T)]
    while bounds[-1] < T:
        bounds.append(min(bounds[-1] + w, T))
    return [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


# ---------------------------------------------------------------------------
# parameters and token container
# ---------------------------------------------------------------------------

@dataclass
class TemporalLayerParams:
    """Projections and norm affine for one temporal attention layer."""

    heads: int
    head_dim: int
    wq: DenseTensor
    bq: DenseTensor
    wk: DenseTensor
    bk: DenseTensor
    wv: DenseTensor
    bv: DenseTensor
    wo: DenseTensor
    bo: DenseTensor
    ln_gain: DenseTensor
    ln_bias: DenseTensor
    rope_base: float = 10000.0

    @property
    def width(self) -> int:
        return self.heads * self.head_dim

    @staticmethod
    def create(
        rng: ad.InitRng, width: int, heads: int, rope_base: float = 10000.0
    ) -> "TemporalLayerParams":
        if width % heads != 0:
            raise WidthMismatch(f"width {width} not divisible by {heads} heads")
        head_dim = width // heads
        if head_dim % 2 != 0:
            raise OddDim(f"head_dim must be even for RoPE, got {head_dim}")

        def w():
            return DenseTensor(
                ad.kaiming_uniform(rng, (width, width), width), requires_grad=True
            )

        def b():
            return DenseTensor(np.zeros(width, np.float32), requires_grad=True)

        return TemporalLayerParams(
            heads=heads, head_dim=head_dim,
            wq=w(), bq=b(), wk=w(), bk=b(), wv=w(), bv=b(), wo=w(), bo=b(),
            ln_gain=DenseTensor(np.ones(width, np.float32), requires_grad=True),
            ln_bias=DenseTensor(np.zeros(width, np.float32), requires_grad=True),
            rope_base=rope_base,
        )

    def named(self, prefix: str) -> dict[str, DenseTensor]:
        return {
            f"{prefix}.wq": self.wq, f"{prefix}.bq": self.bq,
            f"{prefix}.wk": self.wk, f"{prefix}.bk": self.bk,
            f"{prefix}.wv": self.wv, f"{prefix}.bv": self.bv,
            f"{prefix}.wo": self.wo, f"{prefix}.bo": self.bo,
            f"{prefix}.ln_gain": self.ln_gain, f"{prefix}.ln_bias": self.ln_bias,
        }


@dataclass
class TokenBatch:
    """Sparse tokens of one clip: frame index, spatial coord, feature row.

    Rows stay in the tensor's canonical order; attention gathers window
    subsequences with explicit index maps and scatters results back, so the
    row order of the output always matches the input.
    """

    frames: np.ndarray            # [L] int
    coords: np.ndarray            # [L, 3] int
    features: DenseTensor         # [L, C]
    N: int
    T: int

    @property
    def length(self) -> int:
        return int(self.frames.shape[0])

    @property
    def width(self) -> int:
        return int(self.features.shape[1])

    def with_features(self, features: DenseTensor) -> "TokenBatch":
        return TokenBatch(self.frames, self.coords, features, self.N, self.T)


def window_permutation(
    frames: np.ndarray, T: int, cfg: TemporalWindowConfig
) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-window row indices plus their concatenation (a permutation)."""
    groups = []
    for a, b in partition_windows(T, cfg):
        idx = np.nonzero((frames >= a) & (frames < b))[0]
        if idx.size:
            groups.append(idx)
    perm = np.concatenate(groups) if groups else np.zeros(0, dtype=np.int64)
    return groups, perm


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def windowed_attention(
    feats: DenseTensor,
    frames: np.ndarray,
    params: TemporalLayerParams,
    cfg: TemporalWindowConfig,
    T: int,
) -> DenseTensor:
    """Windowed multi-head attention with temporal RoPE; no residual."""
    L, C = feats.shape
    if C != params.width:
        raise WidthMismatch(f"token width {C} != layer width {params.width}")
    if L == 0:
        return DenseTensor(np.zeros((0, C), np.float32))
    groups, perm = window_permutation(frames, T, cfg)
    H, dh = params.heads, params.head_dim
    inv_sqrt = 1.0 / np.sqrt(dh)
    outputs = []
    for idx in groups:
        xw = ad.take_rows(feats, idx)
        q = ad.linear(xw, params.wq, params.bq)
        k = ad.linear(xw, params.wk, params.bk)
        v = ad.linear(xw, params.wv, params.bv)
        cos, sin = rope_tables(frames[idx], dh, params.rope_base)
        head_outs = []
        for h in range(H):
            lo, hi = h * dh, (h + 1) * dh
            qh = ad.rope_rotate(ad.slice_cols(q, lo, hi), cos, sin)
            kh = ad.rope_rotate(ad.slice_cols(k, lo, hi), cos, sin)
            vh = ad.slice_cols(v, lo, hi)
            logits = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt)
            attn = ad.softmax(logits, axis=-1)
            head_outs.append(ad.matmul(attn, vh))
        merged = ad.concat_cols(head_outs)
        outputs.append(ad.linear(merged, params.wo, params.bo))
    stacked = ad.concat_rows(outputs) if len(outputs) > 1 else outputs[0]
    return ad.scatter_add_rows(stacked, perm, L)


def temporal_attention(
    tokens: TokenBatch, params: TemporalLayerParams, cfg: TemporalWindowConfig
) -> TokenBatch:
    """Windowed temporal self-attention with a residual connection."""
    attn = windowed_attention(tokens.features, tokens.frames, params, cfg, tokens.T)
    return tokens.with_features(ad.add(tokens.features, attn))


def temporal_layer_forward(
    tokens: TokenBatch, params: TemporalLayerParams, cfg: TemporalWindowConfig
) -> TokenBatch:
    """Pre-norm temporal layer: x + Attention(LayerNorm(x))."""
    if tokens.length == 0:
        return tokens
    h = ad.layer_norm(tokens.features, params.ln_gain, params.ln_bias)
    attn = windowed_attention(h, tokens.frames, params, cfg, tokens.T)
    return tokens.with_features(ad.add(tokens.features, attn))


def adjacent_pairs_covered(T: int, window: int) -> bool:
    """Whether one unshifted plus one shifted layer links all (t, t+1)."""
    covered = set()
    for cfg in (TemporalWindowConfig(window, 0),
                TemporalWindowConfig(window, window // 2)):
        for a, b in partition_windows(T, cfg):
            for t in range(a, b - 1):
                covered.add((t, t + 1))
    return covered == {(t, t + 1) for t in range(T - 1)}
