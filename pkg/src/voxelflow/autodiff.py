"""Dense tensors with reverse-mode differentiation.

A deliberately small tape-based engine: float32 storage with float64
accumulation in reductions, no broadcasting beyond last-axis vector
operations, and a recorded-op list whose reverse sweep visits every op
exactly once.  It is sufficient to train every layer in this package and
cheap enough to verify against central finite differences.

Typical use::

    with Tape() as tape:
        y = matmul(x, w)
        loss = mean_all(mul(y, y))
    grads = tape.backward(loss)     # {leaf uid: DenseTensor}

Ops run in the dtype of their inputs (float64 inputs give a float64 graph),
which is what lets grad_check recompute the forward pass in double precision.
"""

from __future__ import annotations

import itertools
import struct
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    DetachedTensor,
    NotScalar,
    OddDim,
    ShapeMismatch,
    TapeConsumed,
)

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

FINITE_CHECKS = True


class DenseTensor:
    """A dense array plus differentiation metadata.

    data is float32 by default (float64 is kept for finite-difference
    recomputation); requires_grad marks leaves whose gradient backward()
    should report.
    """

    __slots__ = ("data", "requires_grad", "uid", "name")
    _uids = itertools.count()

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.uid = next(DenseTensor._uids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "DenseTensor":
        return DenseTensor(self.data, requires_grad=False, name=self.name)

    def astype(self, dtype) -> "DenseTensor":
        return DenseTensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DenseTensor(shape={self.shape}, grad={self.requires_grad}{tag})"

    def __add__(self, other: "DenseTensor") -> "DenseTensor":
        return add(self, other)

    def __sub__(self, other: "DenseTensor") -> "DenseTensor":
        return sub(self, other)

    def __mul__(self, other: "DenseTensor") -> "DenseTensor":
        return mul(self, other)


class _OpRecord:
    __slots__ = ("out_uid", "in_uids", "backward")

    def __init__(self, out_uid, in_uids, backward):
        self.out_uid = out_uid
        self.in_uids = in_uids
        self.backward = backward


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of differentiable ops; single-threaded, single-use."""

    def __init__(self):
        self._ops: list[_OpRecord] = []
        self._outputs: set[int] = set()
        self._leaves: dict[int, DenseTensor] = {}
        self.visits = 0
        self.op_count = 0
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def backward(self, loss: DenseTensor) -> dict[int, DenseTensor]:
        """Gradients of a scalar loss for every requires_grad leaf.

        Sweeps the recorded ops once, in reverse recording order; the tape
        is consumed afterwards.
        """
        if self._consumed:
            raise TapeConsumed("backward() already ran on this tape")
        if loss.size != 1:
            raise NotScalar(f"loss has shape {loss.shape}")
        if loss.uid not in self._outputs:
            if loss.uid in self._leaves:
                # a bare leaf: gradient of itself is one, nothing else flows
                self._consumed = True
                self.op_count = len(self._ops)
                one = np.ones_like(loss.data)
                return {loss.uid: DenseTensor(one)}
            raise DetachedTensor("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {
            loss.uid: np.ones_like(loss.data)
        }
        # backward rules may hand back views or the incoming gradient itself,
        # so an accumulation buffer is mutated in place only once we own it
        owned: set[int] = set()
        self.op_count = len(self._ops)
        for op in reversed(self._ops):
            self.visits += 1
            g = grads.pop(op.out_uid, None)
            if g is None:
                continue
            for uid, gi in zip(op.in_uids, op.backward(g)):
                if uid is None or gi is None:
                    continue
                acc = grads.get(uid)
                if acc is None:
                    grads[uid] = gi
                elif uid in owned:
                    acc += gi
                else:
                    grads[uid] = acc + gi
                    owned.add(uid)
        result = {
            uid: DenseTensor(g) for uid, g in grads.items() if uid in self._leaves
        }
        self._consumed = True
        self._ops.clear()
        return result


def backward(loss: DenseTensor, tape: Tape) -> dict[int, DenseTensor]:
    """Free-function form of :meth:`Tape.backward`."""
    return tape.backward(loss)


def _tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _out(data: np.ndarray) -> DenseTensor:
    if FINITE_CHECKS and not np.isfinite(data).all():
        raise FloatingPointError("non-finite value produced by a forward op")
    return DenseTensor(data)


def _record(
    out: DenseTensor,
    inputs: Sequence[DenseTensor],
    backward_fn: Callable[[np.ndarray], tuple],
) -> DenseTensor:
    tape = _tape()
    if tape is None:
        return out
    tracked = [t.requires_grad for t in inputs]
    if not any(tracked):
        return out
    out.requires_grad = True
    in_uids = []
    for t, tr in zip(inputs, tracked):
        if tr:
            in_uids.append(t.uid)
            if t.uid not in tape._outputs:
                tape._leaves.setdefault(t.uid, t)
        else:
            in_uids.append(None)
    tape._outputs.add(out.uid)
    tape._ops.append(_OpRecord(out.uid, tuple(in_uids), backward_fn))
    return out


def _same_shape(a: DenseTensor, b: DenseTensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _same_shape(a, b, "add")
    out = _out(a.data + b.data)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _same_shape(a, b, "sub")
    out = _out(a.data - b.data)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    _same_shape(a, b, "mul")
    out = _out(a.data * b.data)
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data
    return _record(
        out, (a, b),
        lambda g: (g * bd if na else None, g * ad if nb else None),
    )


def neg(a: DenseTensor) -> DenseTensor:
    out = _out(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def scale(a: DenseTensor, s: float) -> DenseTensor:
    s = float(s)
    out = _out(a.data * np.asarray(s, dtype=a.dtype))
    return _record(out, (a,), lambda g: (g * s,))


def add_scalar(a: DenseTensor, s: float) -> DenseTensor:
    out = _out(a.data + np.asarray(float(s), dtype=a.dtype))
    return _record(out, (a,), lambda g: (g,))


def exp(a: DenseTensor) -> DenseTensor:
    y = np.exp(a.data)
    out = _out(y)
    return _record(out, (a,), lambda g: (g * y,))


def clip(a: DenseTensor, lo: float, hi: float) -> DenseTensor:
    y = np.clip(a.data, lo, hi)
    pass_through = ((a.data > lo) & (a.data < hi)).astype(a.dtype)
    out = _out(y)
    return _record(out, (a,), lambda g: (g * pass_through,))


def gelu(a: DenseTensor) -> DenseTensor:
    """Exact GELU: x * Phi(x) with the Gaussian CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = _out(x * cdf)

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _record(out, (a,), bw)


def sigmoid(a: DenseTensor) -> DenseTensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _out(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


# ---------------------------------------------------------------------------
# last-axis vector ops (the only broadcasting in the engine)
# ---------------------------------------------------------------------------

def add_bias(x: DenseTensor, b: DenseTensor) -> DenseTensor:
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"add_bias: {x.shape} + {b.shape}")
    out = _out(x.data + b.data)
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        gb = g.sum(axis=lead, dtype=np.float64).astype(b.dtype) if b.requires_grad else None
        return (g if x.requires_grad else None, gb)

    return _record(out, (x, b), bw)


def mul_row(x: DenseTensor, v: DenseTensor) -> DenseTensor:
    """Multiply every row of x by the vector v (modulation/gating)."""
    if v.data.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise ShapeMismatch(f"mul_row: {x.shape} * {v.shape}")
    out = _out(x.data * v.data)
    lead = tuple(range(x.data.ndim - 1))
    xd, vd = x.data, v.data

    def bw(g):
        gx = g * vd if x.requires_grad else None
        gv = (g * xd).sum(axis=lead, dtype=np.float64).astype(v.dtype) if v.requires_grad else None
        return (gx, gv)

    return _record(out, (x, v), bw)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def _acc_matmul(a: np.ndarray, b: np.ndarray, out_dtype) -> np.ndarray:
    # float64 accumulation regardless of storage dtype
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(out_dtype)


def matmul(a: DenseTensor, b: DenseTensor) -> DenseTensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype)
    out = _out(_acc_matmul(a.data, b.data, dtype))
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def bw(g):
        ga = _acc_matmul(g, bd.T, ad.dtype) if na else None
        gb = _acc_matmul(ad.T, g, bd.dtype) if nb else None
        return (ga, gb)

    return _record(out, (a, b), bw)


def transpose(a: DenseTensor) -> DenseTensor:
    if a.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects 2D, got {a.shape}")
    out = _out(np.ascontiguousarray(a.data.T))
    return _record(out, (a,), lambda g: (np.ascontiguousarray(g.T),))


def linear(x: DenseTensor, w: DenseTensor, b: DenseTensor | None = None) -> DenseTensor:
    """x @ w (+ b): the standard affine map on the last axis."""
    y = matmul(x, w)
    if b is not None:
        y = add_bias(y, b)
    return y


# ---------------------------------------------------------------------------
# reductions and normalization
# ---------------------------------------------------------------------------

def sum_all(x: DenseTensor) -> DenseTensor:
    out = _out(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype))
    shape, dtype = x.shape, x.dtype
    return _record(out, (x,), lambda g: (np.full(shape, g, dtype=dtype),))


def mean_all(x: DenseTensor) -> DenseTensor:
    n = x.size
    out = _out(np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype))
    shape, dtype = x.shape, x.dtype
    return _record(out, (x,), lambda g: (np.full(shape, g / n, dtype=dtype),))


def mean_rows(x: DenseTensor) -> DenseTensor:
    """Mean over the first axis of a 2D tensor -> vector [C]."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"mean_rows expects 2D, got {x.shape}")
    n = x.shape[0]
    out = _out(x.data.mean(axis=0, dtype=np.float64).astype(x.dtype))

    def bw(g):
        return (np.broadcast_to(g / n, (n, g.shape[0])).astype(x.dtype),)

    return _record(out, (x,), bw)


def softmax(x: DenseTensor, axis: int = -1) -> DenseTensor:
    """Max-subtracted softmax along an axis (float64 internally)."""
    xd = x.data.astype(np.float64)
    xd = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(xd)
    y64 = e / e.sum(axis=axis, keepdims=True)
    y = y64.astype(x.dtype)
    out = _out(y)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True, dtype=np.float64).astype(x.dtype)
        return (y * (g - dot),)

    return _record(out, (x,), bw)


def layer_norm(
    x: DenseTensor, gain: DenseTensor, bias: DenseTensor, eps: float = 1e-5
) -> DenseTensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm affine {gain.shape}/{bias.shape} vs C={d}")
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat64 = (xd - mu) * inv
    xhat = xhat64.astype(x.dtype)
    out = _out(xhat * gain.data + bias.data)
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        gxhat = g * gain.data
        gx = None
        if x.requires_grad:
            m1 = gxhat.mean(axis=-1, keepdims=True, dtype=np.float64)
            m2 = (gxhat * xhat).mean(axis=-1, keepdims=True, dtype=np.float64)
            gx = ((gxhat - m1 - xhat64 * m2) * inv).astype(x.dtype)
        ggain = (
            (g * xhat).sum(axis=lead, dtype=np.float64).astype(gain.dtype)
            if gain.requires_grad else None
        )
        gbias = (
            g.sum(axis=lead, dtype=np.float64).astype(bias.dtype)
            if bias.requires_grad else None
        )
        return (gx, ggain, gbias)

    return _record(out, (x, gain, bias), bw)


# ---------------------------------------------------------------------------
# shape / indexing ops
# ---------------------------------------------------------------------------

def concat_cols(parts: Sequence[DenseTensor]) -> DenseTensor:
    """Concatenate 2D tensors along the last axis."""
    if not parts:
        raise ShapeMismatch("concat_cols of nothing")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeMismatch("concat_cols: row counts differ")
    out = _out(np.concatenate([p.data for p in parts], axis=1))
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)
    flags = [p.requires_grad for p in parts]

    def bw(g):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if flags[i] else None
            for i in range(len(widths))
        )

    return _record(out, tuple(parts), bw)


def concat_rows(parts: Sequence[DenseTensor]) -> DenseTensor:
    """Concatenate 2D tensors along the first axis."""
    if not parts:
        raise ShapeMismatch("concat_rows of nothing")
    cols = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != cols:
            raise ShapeMismatch("concat_rows: column counts differ")
    out = _out(np.concatenate([p.data for p in parts], axis=0))
    counts = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + counts)
    flags = [p.requires_grad for p in parts]

    def bw(g):
        return tuple(
            np.ascontiguousarray(g[offsets[i]:offsets[i + 1]]) if flags[i] else None
            for i in range(len(counts))
        )

    return _record(out, tuple(parts), bw)


def slice_cols(x: DenseTensor, start: int, stop: int) -> DenseTensor:
    if x.data.ndim != 2 or not (0 <= start <= stop <= x.shape[1]):
        raise ShapeMismatch(f"slice_cols [{start}:{stop}] of {x.shape}")
    out = _out(np.ascontiguousarray(x.data[:, start:stop]))
    rows, cols = x.shape
    dtype = x.dtype

    def bw(g):
        gx = np.zeros((rows, cols), dtype=dtype)
        gx[:, start:stop] = g
        return (gx,)

    return _record(out, (x,), bw)


def reshape(x: DenseTensor, shape: tuple[int, ...]) -> DenseTensor:
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatch(f"reshape {x.shape} -> {shape}")
    out = _out(x.data.reshape(shape))
    orig = x.shape
    return _record(out, (x,), lambda g: (g.reshape(orig),))


def take_rows(x: DenseTensor, idx: np.ndarray) -> DenseTensor:
    """Gather rows of a 2D tensor; duplicate indices allowed."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"take_rows expects 2D, got {x.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    out = _out(x.data[idx])
    rows = x.shape[0]
    dtype = x.dtype

    def bw(g):
        gx = np.zeros((rows, g.shape[1]), dtype=dtype)
        np.add.at(gx, idx, g)
        return (gx,)

    return _record(out, (x,), bw)


def scatter_add_rows(x: DenseTensor, idx: np.ndarray, num_rows: int) -> DenseTensor:
    """Scatter-add rows of x into a zero [num_rows, C] tensor."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"scatter_add_rows expects 2D, got {x.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape[0] != x.shape[0]:
        raise ShapeMismatch("scatter_add_rows: index length != rows")
    acc = np.zeros((num_rows, x.shape[1]), dtype=x.dtype)
    np.add.at(acc, idx, x.data)
    out = _out(acc)
    return _record(out, (x,), lambda g: (g[idx],))


def rope_rotate(x: DenseTensor, cos: np.ndarray, sin: np.ndarray) -> DenseTensor:
    """Rotate interleaved (even, odd) pairs of x by per-row angles.

    cos/sin have shape [rows, d/2] and are constants (no gradient).
    """
    if x.data.ndim != 2 or x.shape[1] % 2:
        raise OddDim(f"rope_rotate needs an even width, got {x.shape}")
    xe, xo = x.data[:, 0::2], x.data[:, 1::2]
    y = np.empty_like(x.data)
    y[:, 0::2] = xe * cos - xo * sin
    y[:, 1::2] = xe * sin + xo * cos
    out = _out(y)

    def bw(g):
        ge, go = g[:, 0::2], g[:, 1::2]
        gx = np.empty_like(g)
        gx[:, 0::2] = ge * cos + go * sin
        gx[:, 1::2] = -ge * sin + go * cos
        return (gx,)

    return _record(out, (x,), bw)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[DenseTensor], DenseTensor],
    x: DenseTensor,
    eps: float = 1e-3,
) -> float:
    """Max relative error between tape gradients and central differences.

    The analytic gradient is computed at x's own precision; the difference
    quotient re-evaluates f in float64.  f must be deterministic.
    """
    with Tape() as tape:
        probe = DenseTensor(x.data.copy(), requires_grad=True)
        loss = f(probe)
        if loss.size != 1:
            raise NotScalar("grad_check needs a scalar-valued f")
        grads = tape.backward(loss)
    if probe.uid not in grads:
        analytic = np.zeros(x.shape, dtype=np.float64)
    else:
        analytic = grads[probe.uid].data.astype(np.float64)

    base = x.data.astype(np.float64)
    fd = np.zeros(base.size, dtype=np.float64)
    flat = base.reshape(-1)
    for i in range(base.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(DenseTensor(base.copy())).data)
        flat[i] = orig - eps
        fm = float(f(DenseTensor(base.copy())).data)
        flat[i] = orig
        fd[i] = (fp - fm) / (2.0 * eps)
    fd = fd.reshape(base.shape)
    denom = np.maximum(1e-8, np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom)) if base.size else 0.0


# ---------------------------------------------------------------------------
# deterministic initialization
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = (x + _GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class InitRng:
    """Counter-based splitmix64 stream for reproducible initialization."""

    def __init__(self, seed: int):
        self._base = np.uint64((seed * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        idx = np.arange(self._counter, self._counter + n, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            bits = _splitmix64(self._base + idx * _MIX1)
        return (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def kaiming_uniform(rng: InitRng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """He-style uniform init: U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / max(1, fan_in))
    u = rng.uniform(int(np.prod(shape)))
    return ((u * 2.0 - 1.0) * bound).astype(np.float32).reshape(shape)


# ---------------------------------------------------------------------------
# checkpoint format (.ckpt)
# ---------------------------------------------------------------------------
#
# magic "SS4P", u16 version=1, u32 count, then per parameter:
# u16 name length, UTF-8 name, u16 rank, rank * u32 dims, f32 data.
# All little-endian.

_CKPT_MAGIC = b"SS4P"
CKPT_VERSION = 1


def save_checkpoint(params: dict[str, DenseTensor], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<HI", CKPT_VERSION, len(params)))
        for name, tensor in params.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<H", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CKPT_MAGIC:
        raise ShapeMismatch(f"{path}: bad checkpoint magic {raw[:4]!r}")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != CKPT_VERSION:
        raise ShapeMismatch(f"{path}: unsupported checkpoint version {version}")
    offset = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + nlen].decode("utf-8")
        offset += nlen
        (rank,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        dims = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        out[name] = arr.reshape(dims).astype(np.float32)
    if offset != len(raw):
        raise ShapeMismatch(f"{path}: {len(raw) - offset} trailing bytes")
    return out
