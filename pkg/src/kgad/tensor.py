"""Dense float64 tensors with tape-recorded reverse-mode gradients.

Operations executed inside an active :class:`Tape` are appended to it in
execution order; :func:`backward` walks that list in reverse. Outside a tape the
same functions run as plain numpy arithmetic (inference mode).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

DTYPE = np.float64

# mutation hook for the gradient checker's self-test; 1.0 in normal operation
_FAULTS = {"sigmoid_grad_scale": 1.0}


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_op", "param")

    def __init__(self, data, requires_grad: bool = False, param: "Param | None" = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._op = "leaf"
        self.param = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of differentiable operations."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a non-finite entry always makes the sum non-finite; only then scan in full
    if not np.isfinite(np.sum(arr)) and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def _record(op: str, out: np.ndarray, parents: Sequence[Tensor],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    _check_finite(out, op)
    res = Tensor(out)
    res._op = op
    tape = Tape.active()
    if tape is not None and any(p.requires_grad for p in parents):
        res.requires_grad = True
        res._parents = tuple(parents)
        res._backward = backward
        tape.nodes.append(res)
    return res


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


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
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(.) through ``tape`` in reverse execution order."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    for node in tape.nodes:
        node.grad = None
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is not None:
            node._backward(node.grad)


# -- elementwise and linear algebra -------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _record("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record("mul", a.data * b.data, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _record("matmul", a.data @ b.data, (a, b), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, sizes, axis=axis)):
            _accum(t, part)

    return _record("concat", out, ts, bw)


def slice_cols(a, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``."""
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for shape {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[..., start:stop] = g
        _accum(a, full)

    return _record("slice", a.data[..., start:stop], (a,), bw)


def slice_rows(a, start: int, stop: int) -> Tensor:
    """``a[start:stop]`` along the first axis."""
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"row slice [{start}:{stop}] out of range for shape {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)

    return _record("slice_rows", a.data[start:stop], (a,), bw)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _record("reshape", out, (a,), bw)


def take_rows(table, idx) -> Tensor:
    """Row gather ``table[idx]``; gradients scatter-add back into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            kernels.scatter_add_rows(full, idx.ravel(), g.reshape(idx.size, -1))
            _accum(table, full)

    return _record("take_rows", table.data[idx], (table,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form: overflow-free for any input and a single vectorised call
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        _accum(a, g * out * (1.0 - out) * _FAULTS["sigmoid_grad_scale"])

    return _record("sigmoid", out, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out * out))

    return _record("tanh", out, (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _record("relu", a.data * mask, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def bw(g):
        _accum(a, g / a.data)

    return _record("log", out, (a,), bw)


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    out = softmax_array(a.data, axis)

    def bw(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _record("softmax", out, (a,), bw)


def l2_norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at zero is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        denom = np.expand_dims(out, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(denom > 0, a.data / denom, 0.0)
        _accum(a, np.expand_dims(g, axis) * unit)

    return _record("l2_norm", out, (a,), bw)


def dot(a, b) -> Tensor:
    """Inner product along the last axis (row-wise for matrices)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        ge = np.expand_dims(g, -1)
        if a.requires_grad:
            _accum(a, ge * b.data)
        if b.requires_grad:
            _accum(b, ge * a.data)

    return _record("dot", (a.data * b.data).sum(axis=-1), (a, b), bw)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def bw(g):
        ge = g if axis is None else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(ge, a.shape))

    return _record("sum", np.asarray(a.data.sum(axis=axis)), (a,), bw)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]

    def bw(g):
        ge = g if axis is None else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(ge / n, a.shape))

    return _record("mean", np.asarray(a.data.mean(axis=axis)), (a,), bw)


def attend(anchor, table, idx, plan: "kernels.GroupPlan | None" = None) -> Tensor:
    """Dot-product attention of each anchor row over its own neighbour rows.

    ``anchor`` is ``(B, D)``, ``table`` is ``(N, D)`` and ``idx`` is ``(B, m)``
    row indices into ``table``. Row ``b`` of the result is
    ``sum_j softmax(anchor[b] . table[idx[b]])_j * table[idx[b, j]]``.

    With a :class:`kernels.GroupPlan` built from ``idx`` the same quantity is
    computed group-wise with matrix products, which is much faster when many
    rows draw from the same few buckets.
    """
    anchor, table = as_tensor(anchor), as_tensor(table)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if anchor.data.ndim != 2 or table.data.ndim != 2 or anchor.shape[1] != table.shape[1]:
        raise ShapeError(f"attend: anchor {anchor.shape} and neighbours {table.shape} widths differ")
    if idx.ndim != 2 or idx.shape[0] != anchor.shape[0] or idx.shape[1] < 1:
        raise ShapeError(f"attend: index shape {idx.shape} does not match anchors {anchor.shape}")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexError("attend: neighbour index out of range")
    if plan is not None and plan.n_rows != anchor.shape[0]:
        raise ShapeError(f"attend: plan covers {plan.n_rows} rows, anchors have {anchor.shape[0]}")

    if plan is None:
        z, alpha = kernels.attend_forward(anchor.data, table.data, idx)
    else:
        z, alpha = kernels.grouped_attend_forward(anchor.data, table.data, plan)

    def bw(g):
        g = np.ascontiguousarray(g)
        if plan is None:
            g_anchor, g_table = kernels.attend_backward(
                anchor.data, table.data, idx, alpha, z, g, table.requires_grad)
        else:
            g_anchor, g_table = kernels.grouped_attend_backward(
                anchor.data, table.data, plan, alpha, z, g, table.requires_grad)
        _accum(anchor, g_anchor)
        if g_table is not None:
            _accum(table, g_table)

    return _record("attend", z, (anchor, table), bw)


# -- parameters, initialisation, optimiser ------------------------------------


def xavier_init(shape: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform values in ``[-sqrt(6/(fan_in+fan_out)), +...]``."""
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ValueError("shape must have at least one dimension")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_in, fan_out = shape[0] * receptive, shape[1] * receptive
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    step: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)


class ParamStore:
    """Named trainable arrays with their gradient and Adam state."""

    def __init__(self):
        self.params: OrderedDict[str, Param] = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Param(value)
        self.params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def leaves(self) -> dict[str, Tensor]:
        """Fresh gradient-tracking leaves over the current values."""
        return {n: Tensor(p.value, requires_grad=True, param=p) for n, p in self.params.items()}

    def frozen(self) -> dict[str, Tensor]:
        return {n: Tensor(p.value) for n, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad.fill(0.0)

    def collect(self, leaves: Iterable[Tensor]) -> None:
        """Add leaf gradients from the last backward pass into the store."""
        for t in leaves:
            if t.grad is not None and t.param is not None:
                t.param.grad += t.grad

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self.params.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.params):
            missing = set(self.params) ^ set(values)
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for n, p in self.params.items():
            v = np.asarray(values[n], dtype=DTYPE)
            if v.shape != p.value.shape:
                raise ShapeError(f"{n}: shape {v.shape} != {p.value.shape}")
            p.value[...] = v

    def n_values(self) -> int:
        return int(np.sum([p.value.size for p in self.params.values()]))


def adam_step(store: ParamStore, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter from its accumulated gradient."""
    for p in store.params.values():
        p.step += 1
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
