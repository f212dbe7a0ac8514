"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a backward rule.  Backward rules are
themselves written with tensor ops, so passing ``create_graph=True`` to
:func:`grad` yields gradients that can be differentiated again (used by
the gradient penalty).

Tensors receive a monotonically increasing id on creation; inputs always
precede outputs, so sorting ancestors by id gives a topological order.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def no_grad():
    """Context in which new ops record no graph."""
    return _grad_mode(False)


def enable_grad():
    """Re-enable graph recording, e.g. inside a ``no_grad`` block."""
    return _grad_mode(True)


class Tensor:
    """An n-dimensional float64 array that can take part in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._id = next(_ids)

    # -- basic properties ---------------------------------------------------
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
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, accumulate: bool = False) -> None:
        backward(self, accumulate=accumulate)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_ids)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def grad_enabled() -> bool:
    return _grad_enabled


def make_op(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    """Register a custom op; ``backward_fn(g, out)`` returns one grad per parent."""
    return _make(np.asarray(data, dtype=np.float64), tuple(parents), backward_fn, op)


def _shape_error(op: str, a: Tensor, b: Tensor) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    return reshape(tsum(g, axes, keepdims=True), shape)


def broadcast_to(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    data = np.broadcast_to(a.data, shape).copy()
    return _make(data, (a,), lambda g, out: (unbroadcast(g, a.shape),), "broadcast_to")


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a, b) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g, out: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g, out: (unbroadcast(g, a.shape), unbroadcast(neg(g), b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g, out: (unbroadcast(mul(g, b), a.shape), unbroadcast(mul(g, a), b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)

    def back(g, out):
        ga = div(g, b)
        gb = neg(div(mul(g, a), mul(b, b)))
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _make(a.data / b.data, (a, b), back, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g, out: (neg(g),), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    if p == 1.0:
        return a

    def back(g, out):
        return (mul(g, mul(p, power(a, p - 1.0))),)

    return _make(a.data ** p, (a,), back, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.exp(a.data), (a,), lambda g, out: (mul(g, out),), "exp")


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data >= lo).astype(np.float64)
    return _make(np.maximum(a.data, lo), (a,), lambda g, out: (mul(g, mask),), "clamp_min")


def log(a) -> Tensor:
    """Natural log with inputs floored at ``LOG_FLOOR``."""
    a = as_tensor(a)
    safe = clamp_min(a, LOG_FLOOR)
    return _make(np.log(safe.data), (safe,), lambda g, out: (div(g, safe),), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.sqrt(a.data), (a,), lambda g, out: (div(mul(g, 0.5), out),), "sqrt")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g, out: (mul(g, sign),), "abs")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(data, (a,), lambda g, out: (mul(g, mul(out, sub(1.0, out))),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(a)) computed without overflow."""
    a = as_tensor(a)
    x = a.data
    data = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _make(data, (a,), lambda g, out: (mul(g, sigmoid(neg(a))),), "log_sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.tanh(a.data), (a,), lambda g, out: (mul(g, sub(1.0, mul(out, out))),), "tanh")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * factor, (a,), lambda g, out: (mul(g, factor),), "leaky_relu")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))

    def back(g, out):
        return (broadcast_to(reshape(g, kept_shape), a.shape),)

    return _make(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = math.prod(a.shape[i] for i in axes)
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    return _make(a.data.reshape(shape), (a,), lambda g, out: (reshape(g, a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g, out: (transpose(g, inverse),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    return _make(np.array(a.data[idx]), (a,), lambda g, out: (scatter(g, idx, a.shape),), "getitem")


def scatter(g, idx, shape: tuple[int, ...]) -> Tensor:
    """Zeros of ``shape`` with ``g`` added at ``idx`` (the adjoint of indexing)."""
    g = as_tensor(g)
    data = np.zeros(shape)
    np.add.at(data, idx, g.data)
    return _make(data, (g,), lambda gg, out: (getitem(gg, idx),), "scatter")


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; ids may be any integer array."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table with {table.shape[0]} rows")
    return getitem(table, ids)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            i != ax and m != n for i, (m, n) in enumerate(zip(t.shape, tensors[0].shape))
        ):
            raise _shape_error("concat", tensors[0], t)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g, out):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[ax] = slice(int(lo), int(hi))
            grads.append(getitem(g, tuple(sl)))
        return tuple(grads)

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), back, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product of 1-D or 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 or b.ndim > 2 or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:1])

    def back(g, out):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _make(a.data @ b.data, (a, b), back, "matmul")


def linear(x, w) -> Tensor:
    """``x @ w.T`` for a weight stored as (out_features, in_features)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise _shape_error("linear", x, w)
    if x.ndim == 1:
        return reshape(linear(reshape(x, (1, x.shape[0])), w), (w.shape[0],))

    def back(g, out):
        return matmul(g, w), matmul(transpose(g), x)

    return _make(x.data @ w.data.T, (x, w), back, "linear")


# ---------------------------------------------------------------------------
# softmax family and norms
# ---------------------------------------------------------------------------

def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def back(g, out):
        inner = tsum(mul(g, out), axis=-1, keepdims=True)
        return (mul(out, sub(g, inner)),)

    return _make(data, (a,), back, "softmax")


def log_softmax(a) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    data = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def back(g, out):
        return (sub(g, mul(exp(out), tsum(g, axis=-1, keepdims=True))),)

    return _make(data, (a,), back, "log_softmax")


def l1_norm(a, axis=None, keepdims: bool = False) -> Tensor:
    return tsum(abs_(a), axis, keepdims)


def l2_norm(a, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the subgradient at the origin is taken as zero."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    data = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=keepdims))

    def back(g, out):
        norm = reshape(out, kept_shape)
        safe = add(norm, (norm.data == 0).astype(np.float64))
        return (mul(broadcast_to(reshape(g, kept_shape), a.shape), div(a, safe)),)

    return _make(np.asarray(data), (a,), back, "l2_norm")


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def _ancestors(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    order: list[Tensor] = []
    stack_ = [root]
    while stack_:
        t = stack_.pop()
        if t._id in seen:
            continue
        seen.add(t._id)
        order.append(t)
        stack_.extend(p for p in t._parents if p.requires_grad and p._id not in seen)
    order.sort(key=lambda t: t._id, reverse=True)
    return order


def _propagate(root: Tensor, create_graph: bool) -> tuple[list[Tensor], dict[int, Tensor]]:
    nodes = _ancestors(root)
    grads: dict[int, Tensor] = {root._id: Tensor(np.ones_like(root.data))}
    with _grad_mode(create_graph):
        for node in nodes:
            g = grads.get(node._id)
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g, node)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else add(prev, pg)
            if not create_graph:
                # interior grads are no longer needed once pushed to parents
                del grads[node._id]
    return nodes, grads


def _check_scalar(t: Tensor) -> None:
    if t.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {t.shape}")


def backward(loss: Tensor, accumulate: bool = False) -> None:
    """Populate ``.grad`` on every leaf that requires grad.

    Leaf grads are overwritten unless ``accumulate`` is set.  Leaves that
    are unreachable from ``loss`` keep whatever grad they had.
    """
    _check_scalar(loss)
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    nodes, grads = _propagate(loss, create_graph=False)
    for node in nodes:
        if node._parents:
            continue
        g = grads.get(node._id)
        value = np.zeros_like(node.data) if g is None else g.data
        if accumulate and node.grad is not None:
            node.grad = node.grad + value
        else:
            node.grad = np.array(value, dtype=np.float64)


def grad(output: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of scalar ``output`` w.r.t. ``inputs``, returned as tensors.

    With ``create_graph`` the returned tensors are themselves differentiable.
    """
    _check_scalar(output)
    if not output.requires_grad:
        return [Tensor(np.zeros_like(t.data)) for t in inputs]
    nodes, grads = _propagate_keep(output, inputs, create_graph)
    out = []
    for t in inputs:
        g = grads.get(t._id)
        out.append(Tensor(np.zeros_like(t.data)) if g is None else g)
    return out


def _propagate_keep(root: Tensor, keep: Sequence[Tensor], create_graph: bool):
    if create_graph:
        return _propagate(root, True)
    keep_ids = {t._id for t in keep}
    nodes = _ancestors(root)
    grads: dict[int, Tensor] = {root._id: Tensor(np.ones_like(root.data))}
    with _grad_mode(False):
        for node in nodes:
            g = grads.get(node._id)
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g, node)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else add(prev, pg)
            if node._id not in keep_ids:
                del grads[node._id]
    return nodes, grads


@dataclass
class GraphNode:
    op: str
    inputs: tuple[int, ...]
    output: int


def trace(root: Tensor) -> list[GraphNode]:
    """The recorded graph behind ``root`` in creation (append) order."""
    nodes = sorted(_ancestors(root), key=lambda t: t._id)
    return [GraphNode(t._op, tuple(p._id for p in t._parents), t._id) for t in nodes]


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


class Adam:
    """Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr, beta1, beta2, eps, 0,
                               [np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state)


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    if len(state.m) != len(params):
        raise ValueError(f"Adam state tracks {len(state.m)} tensors, got {len(params)} params")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {p.name or i} has no grad")
        if state.m[i].shape != p.shape:
            raise ValueError(f"Adam moment shape {state.m[i].shape} != param shape {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_global_norm(params: Sequence[Tensor], max_norm: float = 5.0) -> float:
    """Scale grads in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if not math.isfinite(total):
        raise FloatingPointError("non-finite gradient encountered while clipping")
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


# ---------------------------------------------------------------------------
# initialisation and checking
# ---------------------------------------------------------------------------

def uniform_param(rng: np.random.Generator, shape, scale: float = 0.08, name=None) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


def dense_param(rng: np.random.Generator, shape, name=None) -> Tensor:
    fan_in = shape[-1]
    return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), requires_grad=True, name=name)


def zeros_param(shape, name=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def finite_difference_check(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
                            h: float = 1e-5, floor: float = 1e-5) -> GradCheckReport:
    """Compare analytic grads of ``build_loss()`` against central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)`` per entry.
    """
    loss = build_loss()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst, worst_name, count = 0.0, "", 0
    with no_grad():
        for k, p in enumerate(params):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = build_loss().item()
                flat[i] = orig - h
                down = build_loss().item()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                a = analytic[k].reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                count += 1
                if err > worst:
                    worst, worst_name = err, p.name or f"param{k}"
    return GradCheckReport(worst, worst_name, count)
