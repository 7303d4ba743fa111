"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations are recorded define-by-run onto the active :class:`Tape`.  A tensor
becomes tracked by ``tape.watch(...)``; any primitive with at least one
tracked input is recorded, everything else is evaluated as a plain constant.

    with Tape() as tape:
        x = tape.watch(np.array([1.0, 2.0, 3.0]))
        out = (x * x).sum()
        tape.backward(out)
    x.grad  # [2, 4, 6]
"""

from __future__ import annotations

import contextvars
import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DomainError",
    "TapeError",
    "as_tensor",
    "value_and_grad",
    "finite_difference_gradient",
    "custom_op",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "relu",
    "tanh",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "max",
    "softmax",
    "log_softmax",
    "logsumexp",
    "gather",
    "reshape",
    "transpose",
    "concat",
    "stack",
    "conv1d",
    "conv2d",
    "save_tensor",
    "load_tensor",
    "tensor_to_bytes",
    "tensor_from_bytes",
    "read_tensors",
    "load_csv",
]

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("houdini_tape", default=None)


class ShapeError(ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, op: str, a: tuple, b: tuple, detail: str = ""):
        self.op, self.shapes = op, (tuple(a), tuple(b))
        msg = f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class TapeError(RuntimeError):
    """Misuse of the computation record."""


class Tensor:
    __slots__ = ("data", "grad", "node", "_tape")
    __array_priority__ = 100

    def __init__(self, data, *, _node: int | None = None, _tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node = _node
        self._tape = _tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def tracked(self) -> bool:
        return self.node is not None and self._tape is not None and self._tape is _ACTIVE.get()

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, o: add(self, o)  # noqa: E731
    __radd__ = lambda self, o: add(o, self)  # noqa: E731
    __sub__ = lambda self, o: sub(self, o)  # noqa: E731
    __rsub__ = lambda self, o: sub(o, self)  # noqa: E731
    __mul__ = lambda self, o: mul(self, o)  # noqa: E731
    __rmul__ = lambda self, o: mul(o, self)  # noqa: E731
    __truediv__ = lambda self, o: div(self, o)  # noqa: E731
    __rtruediv__ = lambda self, o: div(o, self)  # noqa: E731
    __matmul__ = lambda self, o: matmul(self, o)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731

    def __getitem__(self, index):
        return gather(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Single-use computation record.

    Entries are appended in execution order, so the list is topologically
    sorted by construction.  ``backward`` may be called once.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._next = 0
        self._leaves: list[Tensor] = []
        self._token = None
        self._done = False

    def __enter__(self):
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.reset(self._token)
        self._token = None
        return False

    def _new_node(self) -> int:
        self._next += 1
        return self._next - 1

    def watch(self, value) -> Tensor:
        """Return a tracked leaf holding a copy of ``value``."""
        if self._done:
            raise TapeError("tape already consumed by backward()")
        arr = value.data if isinstance(value, Tensor) else value
        t = Tensor(np.array(arr, dtype=np.float64), _node=self._new_node(), _tape=self)
        self._leaves.append(t)
        return t

    def backward(self, output: Tensor) -> None:
        if self._done:
            raise TapeError("tape already consumed by backward()")
        if output.data.size != 1:
            raise TapeError(f"backward() needs a scalar output, got shape {output.shape}")
        if output._tape is not self or output.node is None:
            raise TapeError("output was not produced on this tape")
        self._done = True
        grads: dict[int, np.ndarray] = {output.node: np.ones_like(output.data)}
        for rec in reversed(self.records):
            g = grads.pop(rec.output.node, None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None or inp._tape is not self or inp.node is None:
                    continue
                if inp.node in grads:
                    grads[inp.node] = grads[inp.node] + gi
                else:
                    grads[inp.node] = gi
        for leaf in self._leaves:
            g = grads.get(leaf.node)
            leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def custom_op(value, inputs: Sequence[Tensor], vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap a precomputed ``value`` as the output of a differentiable primitive.

    ``vjp(g)`` must return one gradient (or None) per input, each shaped like
    that input.
    """
    tape = _ACTIVE.get()
    if tape is not None and any(t.node is not None and t._tape is tape for t in inputs):
        if tape._done:
            raise TapeError("tape already consumed by backward()")
        out = Tensor(value, _node=tape._new_node(), _tape=tape)
        tape.records.append(_Record(tuple(inputs), out, vjp))
        return out
    return Tensor(value)


def value_and_grad(fn: Callable[..., Tensor], *args) -> tuple[float, list[np.ndarray]]:
    """Evaluate scalar ``fn`` on watched copies of ``args`` and return its gradients."""
    with Tape() as tape:
        leaves = [tape.watch(a) for a in args]
        out = fn(*leaves)
        if out.node is None:
            # output does not depend on any input
            if np.asarray(out.data).size != 1:
                raise TapeError(f"backward() needs a scalar output, got shape {out.shape}")
            return out.item(), [np.zeros_like(leaf.data) for leaf in leaves]
        tape.backward(out)
    return out.item(), [leaf.grad for leaf in leaves]


def finite_difference_gradient(fn: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of the gradient of scalar ``fn`` at ``x``."""
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(_scalar(fn(x)))
        flat[i] = orig - h
        fm = float(_scalar(fn(x)))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def _scalar(v):
    if isinstance(v, Tensor):
        return v.item()
    return np.asarray(v).item()


# --- broadcasting ----------------------------------------------------------


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    # Trailing-dimension alignment only: the shorter shape must equal the
    # suffix of the longer one.  Size-1 stretching is rejected.
    if a == b:
        return a
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if len(short) == 0 or long_[len(long_) - len(short):] == short:
        return long_
    raise ShapeError(op, a, b, "trailing dimensions must match exactly")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def _binary(op: str, a, b, fwd, vjp_a, vjp_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(op, a.shape, b.shape)
    value = fwd(a.data, b.data)

    def vjp(g):
        return (_unbroadcast(vjp_a(g, a.data, b.data, value), a.shape),
                _unbroadcast(vjp_b(g, a.data, b.data, value), b.shape))

    return custom_op(value, (a, b), vjp)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, *_: g, lambda g, *_: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, *_: g, lambda g, *_: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y, _: g * y, lambda g, x, y, _: g * x)


def div(a, b) -> Tensor:
    b_ = as_tensor(b)
    if np.any(b_.data == 0):
        raise DomainError("div: division by zero")
    return _binary("div", a, b_, np.divide, lambda g, x, y, _: g / y, lambda g, x, y, v: -g * v / y)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return custom_op(-a.data, (a,), lambda g: (-g,))


def _unary(a, value, local) -> Tensor:
    a = as_tensor(a)
    return custom_op(value, (a,), lambda g: (g * local(),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda: (a.data > 0).astype(np.float64))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    v = np.tanh(a.data)
    return _unary(a, v, lambda: 1.0 - v * v)


def exp(a) -> Tensor:
    a = as_tensor(a)
    v = np.exp(a.data)
    return _unary(a, v, lambda: v)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive input (min {a.data.min():.6g})")
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data * a.data, lambda: 2.0 * a.data)


# --- reductions -------------------------------------------------------------


def _expand(g: np.ndarray, shape: tuple, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(a, axis=None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return custom_op(a.data.sum(axis=axis), (a,), lambda g: (np.array(_expand(g, a.shape, axis)),))


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis) * (1.0 / n)


def max(a, axis=None) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    if axis is None:
        idx = np.unravel_index(np.argmax(a.data), a.shape)
        value = a.data[idx]

        def vjp(g):
            out = np.zeros_like(a.data)
            out[idx] = g
            return (out,)

        return custom_op(value, (a,), vjp)
    arg = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    value = np.take_along_axis(a.data, arg, axis).squeeze(axis)

    def vjp(g):
        out = np.zeros_like(a.data)
        np.put_along_axis(out, arg, np.expand_dims(g, axis), axis)
        return (out,)

    return custom_op(value, (a,), vjp)


def logsumexp(a, axis=None) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = shifted.sum(axis=axis, keepdims=True)
    value_k = m + np.log(s)
    soft = shifted / s
    value = value_k.squeeze(axis) if axis is not None else value_k.reshape(())
    return custom_op(value, (a,), lambda g: (soft * _expand(g, a.shape, axis),))


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    value = z - lse
    soft = np.exp(value)
    return custom_op(value, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = np.exp(a.data - np.max(a.data, axis=axis, keepdims=True))
    value = z / z.sum(axis=axis, keepdims=True)
    return custom_op(value, (a,), lambda g: (value * (g - (g * value).sum(axis=axis, keepdims=True)),))


# --- shape manipulation -----------------------------------------------------


def gather(a, index) -> Tensor:
    """``a[index]`` for any numpy basic or advanced index."""
    a = as_tensor(a)
    value = np.array(a.data[index])

    def vjp(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return custom_op(value, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.data.reshape(shape)
    except ValueError as err:
        raise ShapeError("reshape", a.shape, tuple(np.atleast_1d(shape)), str(err)) from None
    return custom_op(value, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    value = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return custom_op(value, (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeError("concat", ts[0].shape, ts[-1].shape, str(err)) from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return custom_op(value, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        value = np.stack([t.data for t in ts], axis=axis)
    except ValueError as err:
        raise ShapeError("stack", ts[0].shape, ts[-1].shape, str(err)) from None
    return custom_op(value, ts, lambda g: tuple(np.moveaxis(g, axis, 0)))


# --- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` with ``b`` two-dimensional; leading dims of ``a`` are batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape, "need a[..., k] @ b[k, m]")
    value = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, b.shape[1])
        return ga, a2.T @ g2

    if a.ndim == 1:
        def vjp(g):  # noqa: F811
            return g @ b.data.T, np.outer(a.data, g)

    return custom_op(value, (a, b), vjp)


def _check_conv(op, x, w, b, spatial):
    if x.ndim not in (spatial + 1, spatial + 2) or w.ndim != spatial + 2 or x.shape[-spatial - 1] != w.shape[1]:
        raise ShapeError(op, x.shape, w.shape, "input (..., C_in, *spatial) vs weight (C_out, C_in, *kernel)")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(op, b.shape, (w.shape[0],), "bias must have one entry per output channel")


def conv1d(x, w, b=None, padding: int | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding.

    x: (C_in, L) or (B, C_in, L); w: (C_out, C_in, K); padding defaults to K // 2.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    _check_conv("conv1d", x, w, b, 1)
    k = w.shape[2]
    p = k // 2 if padding is None else padding
    pad = [(0, 0)] * (x.ndim - 1) + [(p, p)]
    xp = np.pad(x.data, pad)
    if xp.shape[-1] < k:
        raise ShapeError("conv1d", x.shape, w.shape, "kernel longer than padded input")
    win = sliding_window_view(xp, k, axis=-1)  # (..., C_in, L_out, K)
    value = np.einsum("...clk,ock->...ol", win, w.data, optimize=True)
    if b is not None:
        value = value + b.data[:, None]

    def vjp(g):
        gw = np.einsum("...clk,...ol->ock", win, g, optimize=True)
        gwin = np.einsum("ock,...ol->...clk", w.data, g, optimize=True)
        gxp = np.zeros_like(xp)
        lout = g.shape[-1]
        for j in range(k):
            gxp[..., j:j + lout] += gwin[..., j]
        gx = gxp[..., p:p + x.shape[-1]] if p else gxp
        gb = None if b is None else g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 2))
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return custom_op(value, inputs, vjp)


def conv2d(x, w, b=None, padding: int | None = None) -> Tensor:
    """Stride-1 2-D cross-correlation with zero padding.

    x: (C_in, H, W) or (B, C_in, H, W); w: (C_out, C_in, KH, KW); padding
    defaults to KH // 2 on every side.
    """
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    _check_conv("conv2d", x, w, b, 2)
    kh, kw = w.shape[2:]
    p = kh // 2 if padding is None else padding
    pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
    xp = np.pad(x.data, pad)
    if xp.shape[-2] < kh or xp.shape[-1] < kw:
        raise ShapeError("conv2d", x.shape, w.shape, "kernel larger than padded input")
    win = sliding_window_view(xp, (kh, kw), axis=(-2, -1))  # (..., C_in, H_out, W_out, KH, KW)
    value = np.einsum("...chwij,ocij->...ohw", win, w.data, optimize=True)
    if b is not None:
        value = value + b.data[:, None, None]

    def vjp(g):
        gw = np.einsum("...chwij,...ohw->ocij", win, g, optimize=True)
        gwin = np.einsum("ocij,...ohw->...chwij", w.data, g, optimize=True)
        gxp = np.zeros_like(xp)
        ho, wo = g.shape[-2:]
        for i in range(kh):
            for j in range(kw):
                gxp[..., i:i + ho, j:j + wo] += gwin[..., i, j]
        gx = gxp[..., p:p + x.shape[-2], p:p + x.shape[-1]] if p else gxp
        if b is None:
            return gx, gw
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 3))
        return gx, gw, gb

    inputs = (x, w, b) if b is not None else (x, w)
    return custom_op(value, inputs, vjp)


# --- serialization ------------------------------------------------------------

MAGIC = b"HFT1"


def tensor_to_bytes(t) -> bytes:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")  # keeps rank 0, unlike ascontiguousarray
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def _read_tensor(buf: io.BufferedIOBase) -> np.ndarray:
    magic = buf.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", buf.read(4))
    shape = struct.unpack(f"<{rank}I", buf.read(4 * rank)) if rank else ()
    n = int(np.prod(shape)) if rank else 1
    payload = buf.read(8 * n)
    if len(payload) != 8 * n:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return _read_tensor(io.BytesIO(data))


def read_tensors(buf, count: int) -> list[np.ndarray]:
    """Read ``count`` consecutive HFT1 records from a binary stream."""
    return [_read_tensor(buf) for _ in range(count)]


def save_tensor(path, t) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def load_csv(path) -> np.ndarray:
    """Load comma-separated numbers: one line gives a 1-D array, several lines a 2-D table."""
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=1)
    with open(path) as fh:
        rows = [ln for ln in fh if ln.strip()]
    if len(rows) > 1 and arr.ndim == 1:
        arr = arr.reshape(len(rows), -1)
    return arr
