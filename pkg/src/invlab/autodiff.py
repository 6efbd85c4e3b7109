"""Reverse-mode automatic differentiation on dense float64 arrays.

Every operation records a node in an implicit computation graph (parent
links plus a local-derivative closure, micrograd style).  Calling
``backward`` on a scalar loss walks the graph in reverse topological
order and accumulates gradients into the ``grad`` buffers of the
``requires_grad`` leaves.  Broadcasting follows numpy's trailing-dimension
rule; everything is float64.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "NonFiniteError",
    "backward",
    "matmul",
    "hypot",
    "clamp_min",
    "pad1d",
    "set_debug_checks",
    "finite_difference",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Operand values fall outside the mathematical domain of the op."""


class NonFiniteError(ArithmeticError):
    """A non-finite value was produced where finiteness is required."""


# Debug mode checks every forward result at node creation; release mode
# relies on the loss-level and backward-pass checks instead.
_DEBUG_CHECKS = False

_GUARD = 1e-300  # divisor floor for subgradients at magnitude zero


def set_debug_checks(enabled):
    """Toggle eager non-finite detection at every node creation."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tensor:
    """Dense float64 array that participates in the reverse-mode graph."""

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def is_leaf(self):
        return not self._parents

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- gradient housekeeping ------------------------------------------
    def zero_grad(self):
        self.grad = None

    def detach(self):
        """A graph-free view of the same data."""
        return Tensor(self.data)

    def backward(self):
        backward(self)

    # -- operators -------------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise -------------------------------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def log10(self):
        return log10(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)

    # -- reductions and reshapes --------------------------------------------
    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    def max(self, axis=None):
        return reduce_max(self, axis)

    def softmax(self, axis=-1):
        return softmax(self, axis)

    def log_softmax(self, axis=-1):
        return log_softmax(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def take(self, indices):
        return take(self, indices)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op):
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, _op=op)
    return Tensor(data)


def _check_broadcast(a_shape, b_shape, op):
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} do not broadcast") from None


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_axis(axis, ndim, op):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape, "add")
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd, "add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape, "sub")
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bwd, "sub")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape, "mul")
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bwd, "mul")


def neg(a):
    a = _lift(a)

    def bwd(g):
        return (-g,)

    return _make(-a.data, (a,), bwd, "neg")


def exp(a):
    a = _lift(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _make(out, (a,), bwd, "exp")


def log(a):
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: argument must be strictly positive")
    out = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _make(out, (a,), bwd, "log")


def log10(a):
    a = _lift(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log10: argument must be strictly positive")
    out = np.log10(a.data)
    ln10 = np.log(10.0)

    def bwd(g):
        return (g / (a.data * ln10),)

    return _make(out, (a,), bwd, "log10")


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), bwd, "tanh")


def relu(a):
    a = _lift(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        # subgradient at 0 is 0
        return (g * (a.data > 0.0),)

    return _make(out, (a,), bwd, "relu")


def power(a, exponent):
    a = _lift(a)
    p = float(exponent)
    if p != round(p):
        if np.any(a.data < 0.0):
            raise DomainError("power: negative base with non-integer exponent")
    if p < 0.0 and np.any(a.data == 0.0):
        raise DomainError("power: zero base with negative exponent")
    out = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), bwd, "power")


def absolute(a):
    a = _lift(a)
    out = np.abs(a.data)

    def bwd(g):
        return (g * np.sign(a.data),)

    return _make(out, (a,), bwd, "abs")


def hypot(a, b):
    """Elementwise sqrt(a^2 + b^2) with a guarded subgradient at zero."""
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.shape, b.shape, "hypot")
    out = np.hypot(a.data, b.data)

    def bwd(g):
        denom = np.maximum(out, _GUARD)
        return (_unbroadcast(g * a.data / denom, a.shape),
                _unbroadcast(g * b.data / denom, b.shape))

    return _make(out, (a, b), bwd, "hypot")


def clamp_min(a, floor):
    a = _lift(a)
    lo = float(floor)
    out = np.maximum(a.data, lo)

    def bwd(g):
        return (g * (a.data > lo),)

    return _make(out, (a,), bwd, "clamp_min")


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
        out = a.data @ b.data

        def bwd(g):
            return g @ b.data.T, a.data.T @ g

        return _make(out, (a, b), bwd, "matmul")
    if a.ndim == 2 and b.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
        out = a.data @ b.data

        def bwd(g):
            return np.outer(g, b.data), a.data.T @ g

        return _make(out, (a, b), bwd, "matmul")
    raise ShapeError(f"matmul: unsupported ranks {a.ndim} @ {b.ndim}")


def reduce_sum(a, axis=None):
    a = _lift(a)
    axis = _check_axis(axis, a.ndim, "sum")
    out = np.sum(a.data, axis=axis)

    def bwd(g):
        if axis is None:
            return (np.full(a.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), bwd, "sum")


def reduce_mean(a, axis=None):
    a = _lift(a)
    axis = _check_axis(axis, a.ndim, "mean")
    count = a.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis)

    def bwd(g):
        if axis is None:
            return (np.full(a.shape, g / count),)
        return (np.broadcast_to(np.expand_dims(g / count, axis), a.shape).copy(),)

    return _make(out, (a,), bwd, "mean")


def reduce_max(a, axis=None):
    a = _lift(a)
    axis = _check_axis(axis, a.ndim, "max")
    out = np.max(a.data, axis=axis)

    def bwd(g):
        # route the gradient to the first maximal entry (lowest flat index)
        buf = np.zeros(a.shape)
        if axis is None:
            buf.flat[np.argmax(a.data)] = g
        else:
            idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
            np.put_along_axis(buf, idx, np.expand_dims(g, axis), axis)
        return (buf,)

    return _make(out, (a,), bwd, "max")


def softmax(a, axis=-1):
    a = _lift(a)
    axis = _check_axis(axis, a.ndim, "softmax")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bwd(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), bwd, "softmax")


def log_softmax(a, axis=-1):
    a = _lift(a)
    axis = _check_axis(axis, a.ndim, "log_softmax")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def bwd(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _make(out, (a,), bwd, "log_softmax")


def reshape(a, shape):
    a = _lift(a)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), bwd, "reshape")


def transpose(a):
    a = _lift(a)
    if a.ndim != 2:
        raise ShapeError("transpose: rank-2 tensors only")
    out = a.data.T.copy()

    def bwd(g):
        return (g.T,)

    return _make(out, (a,), bwd, "transpose")


def take(a, indices):
    """Gather by flat index; the adjoint scatter-adds back into place."""
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = a.data.ravel()[idx]

    def bwd(g):
        buf = np.zeros(a.size)
        np.add.at(buf, idx.ravel(), np.asarray(g).ravel())
        return (buf.reshape(a.shape),)

    return _make(out, (a,), bwd, "take")


def pad1d(a, left=0, right=0):
    """Zero-pad a rank-1 tensor on either end."""
    a = _lift(a)
    if a.ndim != 1:
        raise ShapeError("pad1d: rank-1 tensors only")
    out = np.pad(a.data, (left, right))
    n = a.shape[0]

    def bwd(g):
        return (g[left:left + n],)

    return _make(out, (a,), bwd, "pad1d")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss):
    """Populate ``grad`` for every requires_grad leaf below a scalar loss.

    Repeated calls accumulate into leaf grads; intermediate gradients are
    scratch state local to each pass.
    """
    if loss.data.size != 1:
        raise ValueError("backward requires a scalar loss")
    if not loss._parents:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return
        raise ValueError("backward on a constant: the graph is empty")

    # iterative postorder DFS over parent links -> topological order
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for index, node in enumerate(reversed(topo)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient at node {index} (op {node._op!r})")
        if node._parents:
            # non-finite results are caught explicitly at the next node
            with np.errstate(all="ignore"):
                parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                grads[id(parent)] = pg if held is None else held + pg
        else:
            node.grad = np.array(g) if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# independent gradient oracle
# ---------------------------------------------------------------------------

def finite_difference(f, x, h=1e-5, coords=None):
    """Central-difference gradient of a scalar function of one array.

    ``f`` maps an ndarray to a float.  With ``coords`` (flat indices) only
    those partials are returned, in order; otherwise the full gradient
    array is returned.  This is the reference oracle the backward pass is
    tested against; it never touches the graph machinery.
    """
    x = np.asarray(x, dtype=np.float64)
    flat_coords = list(range(x.size)) if coords is None else list(coords)
    partials = np.empty(len(flat_coords))
    for slot, i in enumerate(flat_coords):
        bumped = x.copy()
        bumped.flat[i] = x.flat[i] + h
        up = f(bumped)
        bumped.flat[i] = x.flat[i] - h
        down = f(bumped)
        partials[slot] = (up - down) / (2.0 * h)
    if coords is None:
        return partials.reshape(x.shape)
    return partials
