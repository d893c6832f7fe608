"""Small dense tensor with a recording tape and reverse-mode gradients.

Operations only record themselves when a :class:`Tape` is active in the
current context and at least one input requires a gradient; outside a tape
they are plain numpy forward passes.  All arithmetic is float64.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "mgfa_active_tape", default=None
)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the simple elementwise cases
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Record:
    __slots__ = ("output", "inputs", "backward_fn", "op")

    def __init__(self, output, inputs, backward_fn, op):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations run inside the block are appended
    in execution order and replayed in reverse by :func:`backward`.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    tape = _active_tape.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.records.append(_Record(out, tuple(inputs), backward_fn, op))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every tensor on ``tape`` with d(loss)/d(tensor).

    Gradients of everything touched by the tape are reset first, so calling
    this twice gives the same result rather than accumulating.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    for rec in tape.records:
        rec.output.grad = None
        for t in rec.inputs:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape.records):
        g = rec.output.grad
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.array(gi, dtype=np.float64, copy=True)
            else:
                t.grad += gi
    for rec in tape.records:
        for t in rec.inputs:
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- convolution


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an N×Cin×H×W input with a Cout×Cin×k×k kernel."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d channel mismatch: input has Cin={cin}, weight has Cin={wcin}")
    if kh != kw:
        raise ShapeError(f"conv2d needs a square kernel, got {kh}x{kw}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride} pad={pad}")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must have shape ({cout},), got {bias.shape}")
    k = kh
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * k * k)
    wmat = weight.data.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def _backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[..., i, j]
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, _backward, "conv2d")


# ------------------------------------------------------------------ reductions


def channel_reduce(x: Tensor, mode: str = "mean") -> Tensor:
    """Collapse the channel axis of N×C×H×W to N×1×H×W by mean or max."""
    if x.data.ndim != 4:
        raise ShapeError(f"channel_reduce expects N×C×H×W, got {x.shape}")
    c = x.shape[1]
    if c < 1:
        raise ShapeError("channel_reduce needs at least one channel")
    if mode == "mean":
        out = x.data.sum(axis=1, keepdims=True) / c

        def _backward(g):
            return (np.broadcast_to(g / c, x.shape),)

    elif mode == "max":
        idx = np.argmax(x.data, axis=1)[:, None]
        out = np.take_along_axis(x.data, idx, axis=1)

        def _backward(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=1)
            return (gx,)

    else:
        raise ValueError(f"channel_reduce mode must be 'mean' or 'max', got {mode!r}")
    return _make(out, (x,), _backward, f"channel_{mode}")


def spatial_softmax(x: Tensor) -> Tensor:
    """Softmax over all H×W locations jointly, per sample, of an N×1×H×W map."""
    if x.data.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"spatial_softmax expects N×1×H×W, got {x.shape}")
    n = x.shape[0]
    flat = x.data.reshape(n, -1)
    z = flat - flat.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def _backward(g):
        gf = g.reshape(n, -1)
        gx = y * (gf - (gf * y).sum(axis=1, keepdims=True))
        return (gx.reshape(x.shape),)

    return _make(y.reshape(x.shape), (x,), _backward, "spatial_softmax")


def pool2d(x: Tensor, mode: str = "avg", window: int = 2, stride: Optional[int] = None) -> Tensor:
    """Spatial average or max pooling with a square window."""
    if x.data.ndim != 4:
        raise ShapeError(f"pool2d expects N×C×H×W, got {x.shape}")
    k = window
    s = k if stride is None else stride
    n, c, h, w = x.shape
    if k < 1 or s < 1:
        raise ShapeError(f"pool2d needs window and stride >= 1, got {k}, {s}")
    if h < k or w < k:
        raise ShapeError(f"pool2d window {k} larger than input {h}x{w}")
    if k == s and (h % s or w % s):
        raise ShapeError(f"pool2d: {h}x{w} input not divisible by window {k}; resize first")
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    win = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    if mode == "avg":
        out = win.sum(axis=(4, 5)) / (k * k)

        def _backward(g):
            gx = np.zeros_like(x.data)
            gk = g / (k * k)
            for i in range(k):
                for j in range(k):
                    gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += gk
            return (gx,)

    elif mode == "max":
        flatwin = win.reshape(n, c, ho, wo, k * k)
        arg = np.argmax(flatwin, axis=4)
        out = np.take_along_axis(flatwin, arg[..., None], axis=4)[..., 0]

        def _backward(g):
            gx = np.zeros_like(x.data)
            for i in range(k):
                for j in range(k):
                    hit = arg == i * k + j
                    gx[:, :, i:i + s * ho:s, j:j + s * wo:s] += np.where(hit, g, 0.0)
            return (gx,)

    else:
        raise ValueError(f"pool2d mode must be 'avg' or 'max', got {mode!r}")
    return _make(np.ascontiguousarray(out), (x,), _backward, f"{mode}_pool")


def global_avg_pool(x: Tensor) -> Tensor:
    """N×C×H×W -> N×C mean over space."""
    n, c, h, w = x.shape
    out = x.data.sum(axis=(2, 3)) / (h * w)

    def _backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape),)

    return _make(out, (x,), _backward, "global_avg_pool")


def sum_all(x: Tensor) -> Tensor:
    def _backward(g):
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(x.data.sum()), (x,), _backward, "sum")


# ----------------------------------------------------------------- elementwise


def _check_broadcast(a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    ok = (
        a.data.ndim == 4
        and b.data.ndim == 4
        and a.shape[0] == b.shape[0]
        and a.shape[2:] == b.shape[2:]
        and (a.shape[1] == 1 or b.shape[1] == 1)
    )
    if not ok:
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=1, keepdims=True)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)

        def _backward_scalar(g):
            return (g,)

        return _make(a.data + c, (a,), _backward_scalar, "add_scalar")
    _check_broadcast(a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), _backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)

    def _backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), _backward, "mul")


def broadcast_mul(attn: Tensor, features: Tensor) -> Tensor:
    """Multiply an N×1×H×W map into every channel of N×C×H×W features."""
    if attn.data.ndim != 4 or attn.shape[1] != 1:
        raise ShapeError(f"broadcast_mul map must be N×1×H×W, got {attn.shape}")
    return mul(attn, features)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def _backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), _backward, "scale")


def elementwise(a: Tensor, b, op: str) -> Tensor:
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, _as_tensor(b))
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def _backward(g):
        return (np.where(mask, g, 0.0),)

    return _make(out, (x,), _backward, "relu")


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample standardization over all non-batch axes, no affine parameters."""
    axes = tuple(range(1, x.data.ndim))
    n = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv

    def _backward(g):
        gm = g.sum(axis=axes, keepdims=True)
        gx = (g * xhat).sum(axis=axes, keepdims=True)
        return (inv / n * (n * g - gm - xhat * gx),)

    return _make(xhat, (x,), _backward, "layer_norm")


def square(x: Tensor) -> Tensor:
    def _backward(g):
        return (2.0 * x.data * g,)

    return _make(x.data * x.data, (x,), _backward, "square")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    sizes = [t.shape[1] for t in tensors]
    base = tensors[0].shape
    for t in tensors:
        if t.data.ndim != 4 or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ShapeError(f"cannot concatenate {t.shape} with {base} on channels")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors))]

    return _make(out, tuple(tensors), _backward, "concat")


# --------------------------------------------------------------- dense / loss


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x: N×D, weight: K×D, bias: K -> N×K."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def _backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, _backward, "linear")


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range [0, {k})")
    logp = log_softmax_rows(logits.data)
    loss = -logp[np.arange(n), labels].sum() / n

    def _backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _make(np.asarray(loss), (logits,), _backward, "cross_entropy")


# -------------------------------------------------------------- verification


def numeric_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray, eps: float) -> np.ndarray:
    base = np.array(x, dtype=np.float64, copy=True)
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn(Tensor(base)).item()
        flat[i] = orig - eps
        fm = fn(Tensor(base)).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return out


def analytic_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    t = Tensor(np.array(x, copy=True), requires_grad=True)
    with Tape() as tape:
        loss = fn(t)
    backward(loss, tape)
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def grad_check(fn: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    a = analytic_gradient(fn, data)
    num = numeric_gradient(fn, data, eps)
    err = np.abs(a - num) / np.maximum(1e-12, np.abs(a) + np.abs(num))
    return float(err.max()) if err.size else 0.0
