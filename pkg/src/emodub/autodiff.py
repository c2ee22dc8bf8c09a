"""Minimal dense numeric core with reverse-mode differentiation.

Everything is a 2-D float64 matrix. A :class:`Tensor` wraps a numpy array
and records enough structure to run reverse-mode backpropagation from a
scalar (1x1) output; :class:`Parameter` is a named trainable leaf with a
persistent gradient buffer. Ops cover exactly what the encoding pipeline
needs: linear maps, row softmax (plain and masked), leaky ReLU, scaled
dot-product cross-attention with learned projections, width-preserving 1-D
convolution, concatenation/slicing, and mean-squared error, plus Adam and
a central-finite-difference gradient checker.

All computation is numpy float64 and single-threaded per tape; independent
tapes share no mutable state and may run concurrently.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError, FormatError, NumericError, ShapeError
from .rng import SplitMix64


class Tensor:
    """A 2-D float64 matrix node in a reverse-mode computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() requires a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.shape != (1, 1):
            raise ArgumentError(f"backward() starts from a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable matrix; ``grad`` is allocated up front and accumulated into."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


# --- elementwise and structural ops ----------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, -_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g * factor)

    return _make(a.data * factor, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), backward)


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.rows != b.rows:
        raise ShapeError(f"column concat needs equal row counts: {a.shape} vs {b.shape}")
    split = a.cols

    def backward(g):
        _accum(a, g[:, :split])
        _accum(b, g[:, split:])

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ArgumentError("concat_rows needs at least one part")
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise ShapeError("row concat needs equal column counts")
    offsets = np.cumsum([0] + [p.rows for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward)


def slice_rows(a, r0: int, r1: int) -> Tensor:
    a = as_tensor(a)
    if not (0 <= r0 < r1 <= a.rows):
        raise ShapeError(f"row slice [{r0}:{r1}] out of range for {a.shape}")

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[r0:r1] = g
            _accum(a, full)

    return _make(a.data[r0:r1].copy(), (a,), backward)


def slice_cols(a, c0: int, c1: int) -> Tensor:
    a = as_tensor(a)
    if not (0 <= c0 < c1 <= a.cols):
        raise ShapeError(f"column slice [{c0}:{c1}] out of range for {a.shape}")

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, c0:c1] = g
            _accum(a, full)

    return _make(a.data[:, c0:c1].copy(), (a,), backward)


def shift_rows(a, offset: int) -> Tensor:
    """Shift rows down by ``offset`` (up if negative), zero-filling the gap."""
    a = as_tensor(a)
    if offset == 0:
        return a
    n = a.rows
    out = np.zeros_like(a.data)
    if abs(offset) < n:
        if offset > 0:
            out[offset:] = a.data[: n - offset]
        else:
            out[: n + offset] = a.data[-offset:]

    def backward(g):
        if not a.requires_grad or abs(offset) >= n:
            return
        back = np.zeros_like(a.data)
        if offset > 0:
            back[: n - offset] = g[offset:]
        else:
            back[-offset:] = g[: n + offset]
        _accum(a, back)

    return _make(out, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    positive = a.data > 0
    out = np.where(positive, a.data, slope * a.data)

    def backward(g):
        _accum(a, g * np.where(positive, 1.0, slope))

    return _make(out, (a,), backward)


def masked_softmax_rows(a, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax restricted to mask-allowed entries.

    ``mask`` is a constant 0/1 array of the same shape; every row must allow
    at least one entry. Disallowed entries get probability exactly 0. The
    computation subtracts the row max over allowed entries, so rows of any
    magnitude are safe.
    """
    a = as_tensor(a)
    if mask is None:
        allowed = np.ones(a.shape, dtype=bool)
    else:
        mask = np.asarray(mask)
        if mask.shape != a.data.shape:
            raise ShapeError(f"mask shape {mask.shape} does not match {a.shape}")
        allowed = mask.astype(bool)
        if not allowed.any(axis=1).all():
            raise ArgumentError("softmax mask has a row with no allowed entries")
    x = np.where(allowed, a.data, -np.inf)
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        _accum(a, p * (g - inner))

    return _make(p, (a,), backward)


def softmax_rows(a) -> Tensor:
    """Numerically stabilized row softmax: each row is a distribution."""
    return masked_softmax_rows(a, None)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.full(a.shape, g[0, 0]))

    return _make(np.array([[a.data.sum()]]), (a,), backward)


def mse(pred, target) -> Tensor:
    """Mean squared error over all entries; target is a constant."""
    pred = as_tensor(pred)
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.data.shape != target_arr.shape:
        raise ShapeError(f"mse shape mismatch: {pred.data.shape} vs {target_arr.shape}")
    diff = sub(pred, Tensor(target_arr))
    return scale(sum_all(mul(diff, diff)), 1.0 / pred.data.size)


# --- parameterized layers ---------------------------------------------------


def uniform_init(rng: SplitMix64, rows: int, cols: int, d_in: int) -> np.ndarray:
    """Row-major uniform(-sqrt(1/d_in), +sqrt(1/d_in)) draw from the stream."""
    bound = math.sqrt(1.0 / d_in)
    return np.array(
        [[rng.next_uniform(-bound, bound) for _ in range(cols)] for _ in range(rows)]
    )


@dataclass
class LinearParams:
    """Weights and bias of an affine map ``x @ weight + bias``."""

    weight: Parameter
    bias: Parameter

    @classmethod
    def init(cls, name: str, d_in: int, d_out: int, rng: SplitMix64) -> "LinearParams":
        return cls(
            weight=Parameter(uniform_init(rng, d_in, d_out, d_in), f"{name}.weight"),
            bias=Parameter(uniform_init(rng, 1, d_out, d_in), f"{name}.bias"),
        )

    @property
    def d_in(self) -> int:
        return self.weight.rows

    @property
    def d_out(self) -> int:
        return self.weight.cols

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


def linear(x, weight: Parameter | Tensor, bias: Parameter | Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` with the bias broadcast over rows."""
    return add(matmul(x, weight), bias)


def apply_linear(x, params: LinearParams) -> Tensor:
    return linear(x, params.weight, params.bias)


@dataclass
class CrossAttentionParams:
    """Learned projections of one cross-attention block (square, bias-free)."""

    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter
    heads: int = 1

    @classmethod
    def init(cls, name: str, dim: int, rng: SplitMix64, heads: int = 1) -> "CrossAttentionParams":
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"head count {heads} must divide dim {dim}")
        return cls(
            wq=Parameter(uniform_init(rng, dim, dim, dim), f"{name}.wq"),
            wk=Parameter(uniform_init(rng, dim, dim, dim), f"{name}.wk"),
            wv=Parameter(uniform_init(rng, dim, dim, dim), f"{name}.wv"),
            wo=Parameter(uniform_init(rng, dim, dim, dim), f"{name}.wo"),
            heads=heads,
        )

    @property
    def dim(self) -> int:
        return self.wq.rows

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.wo]


def cross_attention(
    query: Tensor,
    keys: Tensor,
    values: Tensor,
    params: CrossAttentionParams,
    with_weights: bool = False,
):
    """Scaled dot-product cross-attention with learned projections.

    Computes ``softmax(Q' K'^T / sqrt(d_head)) V'`` per head with
    ``Q' = query @ wq`` etc., concatenates heads, and applies the output
    projection. Returns the L x d output, plus the per-head attention
    weight matrices when ``with_weights`` is set.
    """
    query, keys, values = as_tensor(query), as_tensor(keys), as_tensor(values)
    dim = params.dim
    for mat, label in ((query, "query"), (keys, "keys"), (values, "values")):
        if mat.cols != dim:
            raise ShapeError(f"cross-attention {label} has dim {mat.cols}, expected {dim}")
    if keys.rows != values.rows:
        raise ShapeError(f"keys/values row mismatch: {keys.rows} vs {values.rows}")
    q = matmul(query, params.wq)
    k = matmul(keys, params.wk)
    v = matmul(values, params.wv)
    d_head = dim // params.heads
    factor = 1.0 / math.sqrt(d_head)
    head_outs = []
    weights = []
    for h in range(params.heads):
        if params.heads == 1:
            qh, kh, vh = q, k, v
        else:
            lo, hi = h * d_head, (h + 1) * d_head
            qh, kh, vh = slice_cols(q, lo, hi), slice_cols(k, lo, hi), slice_cols(v, lo, hi)
        attn = softmax_rows(scale(matmul(qh, transpose(kh)), factor))
        weights.append(attn.data)
        head_outs.append(matmul(attn, vh))
    merged = head_outs[0]
    for part in head_outs[1:]:
        merged = concat_cols(merged, part)
    out = matmul(merged, params.wo)
    return (out, weights) if with_weights else out


@dataclass
class Conv1dParams:
    """Width-preserving 1-D convolution along the sequence axis.

    The rank-3 kernel (width x d_in x d_out) is stored as a single matrix of
    shape (width * d_in, d_out); tap ``t`` occupies the row block
    ``[t * d_in, (t + 1) * d_in)``. Width must be odd so symmetric zero
    padding preserves the sequence length.
    """

    kernel: Parameter
    bias: Parameter
    width: int
    d_in: int
    d_out: int

    @classmethod
    def init(cls, name: str, d_in: int, d_out: int, rng: SplitMix64, width: int = 1) -> "Conv1dParams":
        if width < 1 or width % 2 == 0:
            raise ConfigError(f"conv width must be odd and >= 1, got {width}")
        return cls(
            kernel=Parameter(uniform_init(rng, width * d_in, d_out, d_in), f"{name}.kernel"),
            bias=Parameter(uniform_init(rng, 1, d_out, d_in), f"{name}.bias"),
            width=width,
            d_in=d_in,
            d_out=d_out,
        )

    def parameters(self) -> list[Parameter]:
        return [self.kernel, self.bias]


def conv1d(x, params: Conv1dParams) -> Tensor:
    """Apply the convolution; output has the same number of rows as ``x``.

    Tap ``t`` sees the input shifted so that output row ``i`` combines input
    rows ``i - width//2 .. i + width//2`` (cross-correlation orientation).
    With width 1 this reduces to exactly ``linear(x, kernel, bias)``.
    """
    x = as_tensor(x)
    if x.cols != params.d_in:
        raise ShapeError(f"conv1d input dim {x.cols}, kernel expects {params.d_in}")
    if params.width == 1:
        return linear(x, params.kernel, params.bias)
    half = params.width // 2
    acc = None
    for t in range(params.width):
        tap = slice_rows(params.kernel, t * params.d_in, (t + 1) * params.d_in)
        term = matmul(shift_rows(x, half - t), tap)
        acc = term if acc is None else add(acc, term)
    return add(acc, params.bias)


# --- optimizer, gradient checking, checkpoints ------------------------------


def collect_parameters(params: Iterable[Parameter]) -> list[Parameter]:
    """Validate and return a list of uniquely named parameters."""
    out = list(params)
    names = [p.name for p in out]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate parameter names: {dupes}")
    return out


class AdamState:
    """Adam with bias correction; defaults follow the training recipe
    (beta1=0.9, beta2=0.98, eps=1e-9, lr=0.00625).

    ``step`` applies ``p -= lr * m_hat / (sqrt(v_hat) + eps)`` to every
    parameter and then zeroes its gradient buffer.
    """

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 0.00625,
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-9,
    ):
        self.params = collect_parameters(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.zero_grad()


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """Apply one Adam update to ``params`` (which must be the state's own)."""
    expected = {id(p) for p in state.params}
    for p in params:
        if id(p) not in expected:
            raise ArgumentError(f"parameter {p.name!r} is not managed by this AdamState")
    state.step()


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    atol: float = 1e-8,
) -> float:
    """Max elementwise relative error between reverse-mode and central
    finite-difference gradients.

    Per entry the error is ``|fd - g| / max(|fd|, |g|)``, with deviations at
    or below the absolute floor ``atol`` counting as zero (they are
    indistinguishable from finite-difference roundoff). ``loss_fn`` must
    rebuild its graph on every call and be deterministic.
    """
    params = collect_parameters(params)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    if not math.isfinite(loss.item()):
        raise NumericError(f"loss is non-finite: {loss.item()}")
    loss.backward()
    analytic = {p.name: p.grad.copy() for p in params}

    def eval_loss() -> float:
        value = loss_fn().item()
        if not math.isfinite(value):
            raise NumericError(f"perturbed loss is non-finite: {value}")
        return value

    worst = 0.0
    for p in params:
        grad = analytic[p.name]
        for i in range(p.rows):
            for j in range(p.cols):
                orig = p.data[i, j]
                p.data[i, j] = orig + eps
                lo_hi = eval_loss()
                p.data[i, j] = orig - eps
                lo_lo = eval_loss()
                p.data[i, j] = orig
                fd = (lo_hi - lo_lo) / (2.0 * eps)
                g = grad[i, j]
                diff = abs(fd - g)
                rel = 0.0 if diff <= atol else diff / max(abs(fd), abs(g))
                if rel > worst:
                    worst = rel
    for p in params:
        p.zero_grad()
    return worst


_CKPT_MAGIC = b"ADPK"
_CKPT_VERSION = 1


def save_checkpoint(params: Iterable[Parameter], path) -> None:
    """Binary parameter checkpoint: magic ``ADPK``, u32 version, u32 count,
    then per parameter a length-prefixed UTF-8 name (u32), u32 rows, u32
    cols, and the row-major little-endian float64 payload."""
    params = collect_parameters(params)
    buf = bytearray()
    buf += _CKPT_MAGIC
    buf += struct.pack("<I", _CKPT_VERSION)
    buf += struct.pack("<I", len(params))
    for p in params:
        raw = p.name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<II", p.rows, p.cols)
        buf += np.ascontiguousarray(p.data).astype("<f8", copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as a name -> matrix mapping (bit-exact)."""
    data = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated payload while reading {what}")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {_CKPT_MAGIC!r}")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != _CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (count,) = struct.unpack("<I", take(4, "count"))
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"parameter {i} name length"))
        name = take(nlen, f"parameter {i} name").decode("utf-8")
        rows, cols = struct.unpack("<II", take(8, f"parameter {i} shape"))
        payload = take(8 * rows * cols, f"parameter {i} payload")
        if name in out:
            raise FormatError(f"{path}: duplicate parameter name {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(rows, cols)
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def restore_checkpoint(params: Iterable[Parameter], path) -> None:
    """Assign checkpointed values to parameters, matching by name."""
    values = load_checkpoint(path)
    for p in collect_parameters(params):
        if p.name not in values:
            raise FormatError(f"{path}: checkpoint has no parameter {p.name!r}")
        stored = values[p.name]
        if stored.shape != p.data.shape:
            raise ShapeError(
                f"checkpoint shape {stored.shape} does not match {p.name!r} {p.data.shape}"
            )
        p.data[...] = stored
