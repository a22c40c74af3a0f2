"""Minimal reverse-mode automatic differentiation on numpy float64.

Design notes:

* A :class:`Tensor` wraps an f64 ndarray plus an optional gradient. Ops
  record backward closures onto the currently active :class:`Tape`; with no
  active tape they run as plain (inference) numpy math.
* Elementwise binary ops require equal shapes, or one operand's shape to be
  an exact trailing suffix of the other's (covers bias vectors, scalar
  gates). No general broadcasting: callers reshape explicitly.
* Everything trains in f64; checkpoints are stored as little-endian f32.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputError,
    DimensionError,
    TrainingDivergedError,
)

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """Dense n-d f64 array, optionally a node in the active tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all semantics live in the module-level functions.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of ops; backward replays it in reverse exactly once."""

    def __init__(self):
        self._records = []  # (out Tensor, backward closure)
        self._on_tape = set()  # id(out) for membership checks

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, fn):
        self._records.append((out, fn))
        self._on_tape.add(id(out))

    def backward(self, loss: Tensor):
        """Populate .grad on every requires_grad ancestor of ``loss``."""
        if loss.size != 1:
            raise ContractError("backward() requires a scalar loss")
        if id(loss) not in self._on_tape:
            raise ContractError("loss is not recorded on this tape")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)


def active_tape() -> Tape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def backward(loss: Tensor):
    """Run backward on the active tape (the tape that recorded ``loss``)."""
    tape = active_tape()
    if tape is None:
        raise ContractError("backward() called with no active tape")
    tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _wire(out: Tensor, inputs, fn):
    """Mark requires_grad and record ``fn`` if a tape is active."""
    tape = active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.record(out, fn)
    return out


def _suffix_axes(big_shape, small_shape):
    """Leading axes to sum over when reducing a grad to a suffix shape."""
    if big_shape[len(big_shape) - len(small_shape) :] != tuple(small_shape):
        raise DimensionError(f"shapes {big_shape} and {small_shape} are not suffix-compatible")
    return tuple(range(len(big_shape) - len(small_shape)))


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return g.sum(axis=_suffix_axes(g.shape, shape))


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def fn(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(g, b.shape))

    return _wire(out, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)

    def fn(g):
        _accumulate(a, _reduce_to(g, a.shape))
        _accumulate(b, _reduce_to(-g, b.shape))

    return _wire(out, (a, b), fn)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)):
        a = _as_tensor(a)
        c = float(b)
        out = Tensor(a.data * c)

        def fn_const(g):
            _accumulate(a, g * c)

        return _wire(out, (a,), fn_const)
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def fn(g):
        _accumulate(a, _reduce_to(g * b.data, a.shape))
        _accumulate(b, _reduce_to(g * a.data, b.shape))

    return _wire(out, (a, b), fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batched when both operands carry equal leading dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires >=2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim and b.ndim != 2:
        raise DimensionError("only (batched @ 2-d) or equal-rank matmul is supported")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul leading dims differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def fn(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _wire(out, (a, b), fn)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))

    def fn(g):
        _accumulate(x, g.reshape(x.shape))

    return _wire(out, (x,), fn)


def swapaxes(x: Tensor, ax1: int, ax2: int) -> Tensor:
    x = _as_tensor(x)
    # Contiguous output: downstream matmuls hit BLAS fast paths.
    out = Tensor(np.ascontiguousarray(np.swapaxes(x.data, ax1, ax2)))

    def fn(g):
        _accumulate(x, np.swapaxes(g, ax1, ax2))

    return _wire(out, (x,), fn)


def take_rows(x: Tensor, n: int) -> Tensor:
    """First ``n`` rows of a 2-d tensor (used to slice positional tables)."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("take_rows expects a 2-d tensor")
    out = Tensor(x.data[:n])

    def fn(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:n] = g
            _accumulate(x, full)

    return _wire(out, (x,), fn)


def concat(parts, axis: int) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def fn(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(p, g[tuple(idx)])

    return _wire(out, tuple(parts), fn)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def fn(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(x, np.broadcast_to(gg, x.shape))

    return _wire(out, (x,), fn)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.exp(x.data))

    def fn(g):
        _accumulate(x, g * out.data)

    return _wire(out, (x,), fn)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.log(x.data))

    def fn(g):
        _accumulate(x, g / x.data)

    return _wire(out, (x,), fn)


def sqrt(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.sqrt(x.data))

    def fn(g):
        _accumulate(x, g * (0.5 / out.data))

    return _wire(out, (x,), fn)


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.tanh(x.data))

    def fn(g):
        _accumulate(x, g * (1.0 - out.data * out.data))

    return _wire(out, (x,), fn)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(1.0 / (1.0 + np.exp(-x.data)))

    def fn(g):
        _accumulate(x, g * out.data * (1.0 - out.data))

    return _wire(out, (x,), fn)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    x = _as_tensor(x)
    xd = x.data
    sq = xd * xd
    t = np.multiply(sq, xd)
    t *= 0.044715
    t += xd
    t *= _GELU_C
    np.tanh(t, out=t)
    y = t + 1.0
    y *= xd
    y *= 0.5
    out = Tensor(y)

    def fn(g):
        du = sq * (3 * 0.044715)
        du += 1.0
        du *= _GELU_C
        du *= 1.0 - t * t
        du *= xd
        du += 1.0 + t
        du *= 0.5
        du *= g
        _accumulate(x, du)

    return _wire(out, (x,), fn)


def softmax(x: Tensor, axis: int = -1, add_mask: np.ndarray | None = None) -> Tensor:
    """Probability vector along ``axis``; stabilized by max subtraction.

    ``add_mask`` is a constant additive logit mask (e.g. causal -inf
    pattern), fused here to avoid materializing an extra score-sized
    intermediate. The backward formula only involves the output, so the
    mask needs no gradient handling.
    """
    x = _as_tensor(x)
    z = x.data + add_mask if add_mask is not None else np.array(x.data)
    z -= z.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    out = Tensor(z)
    y = out.data

    def fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        gx = g - dot
        gx *= y
        _accumulate(x, gx)

    return _wire(out, (x,), fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale/shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xhat = x.data - mu
    var = np.einsum("...i,...i->...", xhat, xhat)[..., None] / x.shape[-1]
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    y = xhat * gamma.data
    y += beta.data
    out = Tensor(y)

    def fn(g):
        _accumulate(gamma, _reduce_to(g * xhat, gamma.shape))
        _accumulate(beta, _reduce_to(g, beta.shape))
        if x.requires_grad:
            gy = g * gamma.data
            gmean = gy.mean(axis=-1, keepdims=True)
            d = x.shape[-1]
            gxhat = np.einsum("...i,...i->...", gy, xhat)[..., None] / d
            gx = gy
            gx -= gmean
            gx -= xhat * gxhat
            gx *= inv
            _accumulate(x, gx)

    return _wire(out, (x, gamma, beta), fn)


def embedding(weight: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup ``weight[indices]`` with scatter-add backward."""
    weight = _as_tensor(weight)
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(weight.data[idx])

    def fn(g):
        if weight.requires_grad:
            gw = np.zeros_like(weight.data)
            np.add.at(gw, idx.reshape(-1), g.reshape(-1, g.shape[-1]))
            _accumulate(weight, gw)

    return _wire(out, (weight,), fn)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over (optionally weighted) positions.

    ``logits`` is (..., V); ``targets`` integer class ids of shape
    logits.shape[:-1]; ``weights`` same shape as targets (0 masks a
    position out). Fused softmax backward.
    """
    logits = _as_tensor(logits)
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.shape != logits.shape[:-1]:
        raise DimensionError("cross_entropy target shape mismatch")
    w = np.ones(tgt.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    wsum = w.sum()
    if wsum <= 0:
        raise ContractError("cross_entropy needs at least one unmasked position")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, tgt[..., None], axis=-1)[..., 0]
    nll = (lse - picked) * w
    out = Tensor(nll.sum() / wsum)

    def fn(g):
        if logits.requires_grad:
            p = np.exp(shifted - lse[..., None])
            flat = p.reshape(-1, p.shape[-1])
            flat[np.arange(flat.shape[0]), tgt.reshape(-1)] -= 1.0
            p *= (g * w / wsum)[..., None]
            _accumulate(logits, p)

    return _wire(out, (logits,), fn)


def cosine_sim(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Cosine similarity along ``axis``; rejects (near-)zero vectors."""
    a, b = _as_tensor(a), _as_tensor(b)
    na = np.sqrt((a.data * a.data).sum(axis=axis))
    nb = np.sqrt((b.data * b.data).sum(axis=axis))
    if np.any(na < eps) or np.any(nb < eps):
        raise DegenerateInputError("cosine_sim on a zero vector")
    dot = tsum(mul(a, b), axis=axis)
    denom = mul(sqrt(tsum(mul(a, a), axis=axis)), sqrt(tsum(mul(b, b), axis=axis)))
    return mul(dot, pow_inv(denom))


def pow_inv(x: Tensor) -> Tensor:
    """Elementwise 1/x."""
    x = _as_tensor(x)
    out = Tensor(1.0 / x.data)

    def fn(g):
        _accumulate(x, -g * out.data * out.data)

    return _wire(out, (x,), fn)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all elements."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError("mse operands must share a shape")
    d = sub(a, b)
    return tmean(mul(d, d))


# ---------------------------------------------------------------------------
# parameters / optimizer
# ---------------------------------------------------------------------------


def xavier_uniform(gen: np.random.Generator, shape) -> Tensor:
    """Xavier-uniform init: fan_in/fan_out from the trailing two dims."""
    if len(shape) >= 2:
        fan_in, fan_out = shape[-2], shape[-1]
    else:
        fan_in = fan_out = shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(gen.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Adam:
    """Standard Adam over a name->Tensor parameter map."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(f"non-finite gradient in {name!r} at step {t}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"TKZ0"
CHECKPOINT_VERSION = 1
ARCH_ENTRY = "__arch__"


def save_checkpoint(path, named_arrays: dict, arch: dict | None = None):
    """Write name->ndarray as f32 little-endian; bit-exact round-trip.

    ``arch`` is embedded as a JSON metadata entry (bytes stored one per
    f32 element, so the container stays single-format).
    """
    entries = dict(named_arrays)
    if arch is not None:
        raw = json.dumps(arch, sort_keys=True).encode("utf-8")
        entries[ARCH_ENTRY] = np.frombuffer(raw, dtype=np.uint8).astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name], dtype=np.float32)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path):
    """Return (name->f32 ndarray, arch dict or None)."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ContractError(f"{path}: bad checkpoint magic")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(dims)
            out[name] = arr
    arch = None
    if ARCH_ENTRY in out:
        raw = out.pop(ARCH_ENTRY).astype(np.uint8).tobytes()
        arch = json.loads(raw.decode("utf-8"))
    return out, arch
