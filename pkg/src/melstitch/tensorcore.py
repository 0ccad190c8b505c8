"""Dense float64 tensors with a dynamic reverse-mode tape and Adam.

Small on purpose: just enough machinery (matmul, softmax, conv1d, tanh,
elementwise arithmetic, MAE) to train the stitch model. Everything is
float64 so finite-difference gradient checks are sharp.
"""

from __future__ import annotations

import struct

import numpy as np


class NumericError(RuntimeError):
    """A forward op produced NaN or Inf."""


class ShapeError(ValueError):
    pass


def _check_finite(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value in forward pass")
    return arr


class Tensor:
    """Immutable row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        _check_finite(self.data)
        self.requires_grad = requires_grad
        self.grad = None  # numpy array, allocated lazily

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class TapeOp:
    """One recorded primitive: inputs, output, and its local gradient rule."""

    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered op record for one forward pass; inputs always precede use."""

    def __init__(self):
        self.ops: list[TapeOp] = []

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("nested tapes are not supported")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False


_active_tape: Tape | None = None


def _record(inputs, output, backward_fn):
    if _active_tape is not None and output.requires_grad:
        _active_tape.ops.append(TapeOp(inputs, output, backward_fn))


def _needs_grad(*tensors) -> bool:
    return _active_tape is not None and any(t.requires_grad for t in tensors)


def backward(loss: Tensor, tape: Tape):
    """Propagate d(loss)/d(param) to every requires_grad tensor on the tape.

    Visits each recorded op exactly once, in reverse order. Parameters that
    never touched the tape keep grad None (treated as zero).
    """
    if loss.data.size != 1:
        raise ShapeError("backward requires a scalar loss")
    loss.accumulate_grad(np.ones_like(loss.data))
    for op in reversed(tape.ops):
        if op.output.grad is None:
            continue
        op.backward_fn(op.output.grad)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=_needs_grad(a, b))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    _record((a, b), out, bwd)
    return out


def transpose(x: Tensor) -> Tensor:
    out = Tensor(x.data.T.copy(), requires_grad=_needs_grad(x))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.T)

    _record((x,), out, bwd)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), requires_grad=_needs_grad(x))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.data.shape))

    _record((x,), out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data, requires_grad=_needs_grad(a, b))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    _record((a, b), out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data, requires_grad=_needs_grad(a, b))

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    _record((a, b), out, bwd)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c, requires_grad=_needs_grad(x))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * c)

    _record((x,), out, bwd)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, requires_grad=_needs_grad(x))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * (1.0 - y * y))

    _record((x,), out, bwd)
    return out


def softmax(x: Tensor, axis: int) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(s, requires_grad=_needs_grad(x))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(s * (g - np.sum(g * s, axis=axis, keepdims=True)))

    _record((x,), out, bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.array([x.data.sum()]), requires_grad=_needs_grad(x))

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g.reshape(-1)[0]))

    _record((x,), out, bwd)
    return out


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all elements. Subgradient at ties is 0."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mae shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = Tensor(np.array([np.abs(diff).mean()]), requires_grad=_needs_grad(pred, target))
    n = diff.size

    def bwd(g):
        local = np.sign(diff) * (g.reshape(-1)[0] / n)
        if pred.requires_grad:
            pred.accumulate_grad(local)
        if target.requires_grad:
            target.accumulate_grad(-local)

    _record((pred, target), out, bwd)
    return out


def _im2col(xp: np.ndarray, k: int) -> np.ndarray:
    # xp: C_in x (T + k - 1) zero-padded; result: (C_in*k) x T
    c_in, tp = xp.shape
    t = tp - k + 1
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # C_in x T x k
    return cols.transpose(0, 2, 1).reshape(c_in * k, t)


def conv1d(x: Tensor, w: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """1-D convolution, channels-first. x: C_in x T, w: C_out x C_in x K."""
    if padding != "same":
        raise ValueError("only 'same' padding is supported")
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ShapeError("conv1d expects x: C_in x T, w: C_out x C_in x K")
    c_out, c_in, k = w.data.shape
    if x.data.shape[0] != c_in:
        raise ShapeError(f"conv1d channel mismatch: x has {x.data.shape[0]}, w wants {c_in}")
    if bias.data.shape != (c_out,):
        raise ShapeError("conv1d bias must be C_out")
    if k % 2 == 0:
        raise ShapeError("'same' padding requires an odd kernel size")
    t = x.data.shape[1]
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad)))
    cols = _im2col(xp, k)  # (C_in*K) x T
    wm = w.data.reshape(c_out, c_in * k)
    y = wm @ cols + bias.data[:, None]
    out = Tensor(y, requires_grad=_needs_grad(x, w, bias))

    def bwd(g):
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=1))
        if w.requires_grad:
            w.accumulate_grad((g @ cols.T).reshape(c_out, c_in, k))
        if x.requires_grad:
            gcols = wm.T @ g  # (C_in*K) x T
            gxp = np.zeros_like(xp)
            gc = gcols.reshape(c_in, k, t)
            for j in range(k):
                gxp[:, j : j + t] += gc[:, j, :]
            x.accumulate_grad(gxp[:, pad : pad + t])

    _record((x, w, bias), out, bwd)
    return out


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params, state: AdamState):
    """One bias-corrected Adam update in place. Missing grads count as zero."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# serialization: u32 rank, u32 extents, then little-endian f64 row-major


def write_tensor(buf, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.astype("<f8").tobytes())


def read_tensor(buf) -> np.ndarray:
    (rank,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{rank}I", buf.read(4 * rank))
    n = int(np.prod(shape)) if rank else 1
    raw = buf.read(8 * n)
    if len(raw) != 8 * n:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
