"""Dense float64 tensors with a reverse-mode gradient tape.

Only the handful of ops the ranking model needs are provided. Every op
accepts leading batch dimensions (numpy broadcasting rules) so a whole
mini-batch of topic-post pairs can run through one recorded graph.

Usage::

    with GradTape() as tape:
        loss = sum_all(tanh(matmul(x, w)))
    tape.backward(loss)
    w.grad  # dloss/dw
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar, all routed through the recorded ops below
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class _Op:
    __slots__ = ("name", "inputs", "out", "backward")

    def __init__(self, name, inputs, out, backward):
        self.name = name
        self.inputs = inputs
        self.out = out
        self.backward = backward


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class GradTape:
    """Records differentiable ops executed while active (one per thread)."""

    def __init__(self):
        self.ops: list[_Op] = []
        self._done = False

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def reset(self) -> None:
        self.ops.clear()
        self._done = False

    def backward(self, loss: Tensor) -> None:
        if self._done:
            raise TapeError("backward already ran on this tape; call reset() first")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._done = True
        loss.grad = np.ones_like(loss.data)
        for op in reversed(self.ops):
            g = op.out.grad
            if g is None:
                continue
            grads = op.backward(g)
            for inp, gi in zip(op.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = gi
                else:
                    inp.grad = inp.grad + gi
        # intermediates are dropped so params are the only holders of grads
        for op in self.ops:
            op.out.grad = None
        loss.grad = None


def _record(name: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = False
    stack = _tape_stack()
    if needs and stack:
        out.requires_grad = True
        stack[-1].ops.append(_Op(name, tuple(inputs), out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# ops
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _record("matmul", (a, b), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), a.data + b.data, backward)


elementwise_add = add


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), a.data - b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record("mul", (a, b), a.data * b.data, backward)


elementwise_mul = mul


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (x,), x.data * c, lambda g: (g * c,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", (x,), y, lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _record("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (g * pos,))


class softmax_trace:
    """Collect ``(label, axis, output)`` for every softmax run while active."""

    def __init__(self):
        self.records: list[tuple[str, int, np.ndarray]] = []

    def __enter__(self):
        stack = getattr(_local, "traces", None)
        if stack is None:
            stack = _local.traces = []
        stack.append(self)
        return self.records

    def __exit__(self, *exc):
        _local.traces.pop()


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None, label: str = "") -> Tensor:
    """Softmax along ``axis``. ``mask`` (bool, broadcastable) marks entries
    that take part; excluded entries come out as exactly 0."""
    z = x.data
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax: non-finite input")
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        if not np.all(mask.any(axis=axis)):
            raise DimensionError("softmax: a slice has every entry masked out")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    for tr in getattr(_local, "traces", ()):
        tr.records.append((label, axis, y))

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (x,), y, backward)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None, label: str = "") -> Tensor:
    return softmax(x, axis=-1, mask=mask, label=label)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"concat(axis={axis}): incompatible shapes {shapes}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _record("concat", tensors, out, backward)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = np.array([x.data.sum()])

        def backward(g):
            return (np.broadcast_to(g.reshape(()), x.shape),)

        return _record("sum", (x,), out, backward)

    ax = axis % x.ndim

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, ax), x.shape),)

    return _record("sum", (x,), x.data.sum(axis=ax), backward)


sum_all = reduce_sum


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / n)


def sum_rows(x: Tensor) -> Tensor:
    """Sum over the row axis: (..., m, n) -> (..., n)."""
    return reduce_sum(x, axis=-2)


def mean_rows(x: Tensor) -> Tensor:
    return reduce_mean(x, axis=-2)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _record("transpose", (x,), np.swapaxes(x.data, -1, -2), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _record("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def take(x: Tensor, idx, axis: int = 0) -> Tensor:
    """Gather slices of ``x`` along ``axis`` (embedding lookup, im2col, slicing)."""
    idx = np.asarray(idx, dtype=np.intp)
    ax = axis % x.ndim
    n = x.shape[ax]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"take: index out of range for axis of length {n}")
    out = np.take(x.data, idx, axis=ax)

    def backward(g):
        gx = np.zeros(x.shape)
        # move the gathered axis block to the front to scatter-add
        g_front = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        gx_front = np.moveaxis(gx, ax, 0)
        np.add.at(gx_front, idx, g_front)
        return (gx,)

    return _record("take", (x,), out, backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    return take(x, np.arange(start, stop), axis=axis)


def pair_mlp(src: Tensor, dst: Tensor, bias: Tensor, w_out: Tensor) -> Tensor:
    """Pairwise scores s_ij = tanh(src_i + dst_j + bias) . w_out.

    (..., n, h), (..., n, h), (h,), (h, 1) -> (..., n, n). Same value as
    composing add/tanh/matmul over an (..., n, n, h) hidden tensor, fused
    so the O(n^2 h) work is done in a few passes.
    """
    h = src.shape[-1]
    if dst.shape != src.shape or bias.shape != (h,) or w_out.shape != (h, 1):
        raise DimensionError(
            f"pair_mlp: src {src.shape}, dst {dst.shape}, bias {bias.shape}, w_out {w_out.shape}"
        )
    hid = src.data[..., :, None, :] + dst.data[..., None, :, :]
    hid += bias.data
    np.tanh(hid, out=hid)
    w = w_out.data[:, 0]
    flat = hid.reshape(-1, h)
    out = (flat @ w).reshape(hid.shape[:-1])

    def backward(g):
        gflat = g.reshape(-1)
        g_w = gflat @ flat
        # d tanh = 1 - hid^2, times upstream g_ij * w
        gz = hid * hid
        np.subtract(1.0, gz, out=gz)
        gz *= g[..., None]
        gz *= w
        g_src = gz.sum(axis=-2)
        g_dst = gz.sum(axis=-3)
        g_b = g_dst.reshape(-1, h).sum(axis=0)
        return g_src, g_dst, g_b, g_w[:, None]

    return _record("pair_mlp", (src, dst, bias, w_out), out, backward)


# --------------------------------------------------------------------------
# gradient verification
# --------------------------------------------------------------------------


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def _scalar(out: Tensor) -> float:
    if not isinstance(out, Tensor) or out.data.size != 1:
        shape = getattr(out, "shape", type(out).__name__)
        raise DimensionError(f"grad_check: function must return a scalar, got {shape}")
    return out.item()


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max over components of |analytic - central difference| / max(1, |analytic|)."""
    if h <= 0:
        raise ValueError("h must be positive")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with GradTape() as tape:
        out = f(probe)
    _scalar(out)
    tape.backward(out)
    analytic = probe.grad if probe.grad is not None else np.zeros(x.shape)

    numeric = np.zeros(x.shape)
    flat = probe.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f(probe))
        flat[i] = orig - h
        fm = _scalar(f(probe))
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2 * h)
    return float(_rel_err(analytic, numeric).max()) if x.data.size else 0.0


def grad_check_params(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
) -> dict[str, float]:
    """Central-difference check of ``f()`` against every tensor in ``params``.

    ``f`` closes over the params and is re-evaluated with each component
    nudged in place. Returns the max relative error per path.
    """
    for p in params.values():
        p.grad = None
    with GradTape() as tape:
        out = f()
    _scalar(out)
    tape.backward(out)
    report = {}
    for path, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        numeric = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f())
            flat[i] = orig - h
            fm = _scalar(f())
            flat[i] = orig
            num_flat[i] = (fp - fm) / (2 * h)
        report[path] = float(_rel_err(analytic, numeric).max()) if p.data.size else 0.0
        p.grad = None
    return report
