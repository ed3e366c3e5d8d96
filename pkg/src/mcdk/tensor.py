"""Reverse-mode autodiff over n-d float arrays.

Tensors wrap numpy arrays (float32 by default, float64 for the gradient
check harness). Each recorded op stores its parents and a backward closure;
``backward()`` replays them in reverse topological order. Broadcasting is
restricted to singleton-axis expansion between same-rank operands so every
backward reduction is unambiguous.
"""

import contextlib

import numpy as np

from .errors import AutodiffError, DimensionError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled():
    return _GRAD_ENABLED


def _as_float_dtype(dtype):
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise AutodiffError(f"tensors hold float32/float64 data, got {dtype}")
    return dtype


class Tensor:
    """Array node in the autodiff graph.

    data is immutable after creation except for grad accumulation. grad,
    when populated, always matches data's shape and dtype.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        arr = np.ascontiguousarray(arr, dtype=_as_float_dtype(dtype))
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._consumed = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------------

    def detach(self):
        """Leaf tensor sharing this data, cut from the graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._consumed = False
        return out

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, grad=None):
        """Run reverse-mode accumulation from this tensor.

        A graph may be consumed once; re-run the forward pass to record a
        fresh graph before calling backward again.
        """
        if self._consumed:
            raise AutodiffError("backward already ran on this graph; re-record the forward pass")
        if grad is None:
            if self.data.size != 1:
                raise AutodiffError("backward() without an explicit grad needs a scalar loss")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)

        # Iterative DFS: recorded clips can exceed the interpreter recursion limit.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            if node._consumed:
                raise AutodiffError("graph reuses a tensor whose backward already ran")
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.accumulate_grad(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._consumed = True
            node._backward = None
            node._parents = ()
            if not node.requires_grad and node is not self:
                node.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, _wrap(other, self))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def abs(self):
        return absval(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _wrap(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _make(data, parents, backward):
    """Record an op output; drops graph bookkeeping under no_grad."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- broadcasting helpers ----------------------------------------------------


def _check_broadcast(a, b, opname):
    if a.ndim != b.ndim:
        raise DimensionError(
            f"{opname}: operands must share rank, got {a.shape} vs {b.shape}"
        )
    for axis, (ea, eb) in enumerate(zip(a.shape, b.shape)):
        if ea != eb and ea != 1 and eb != 1:
            raise DimensionError(
                f"{opname}: axis {axis} extents {ea} vs {eb} are not singleton-broadcastable"
            )
    if a.dtype != b.dtype:
        raise AutodiffError(f"{opname}: mixed dtypes {a.dtype} vs {b.dtype}")


def _unbroadcast(grad, shape):
    """Sum grad back down to `shape` over axes that were expanded from 1."""
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def add(a, b):
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(out, (a, b), backward)


def sub(a, b):
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(out, (a, b), backward)


def mul(a, b):
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward)


def div(a, b):
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), backward)


def scale(x, factor, offset=0.0):
    """factor * x + offset with python scalars."""
    dt = x.data.dtype.type
    out = x.data * dt(factor) + dt(offset)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * dt(factor))

    return _make(out, (x,), backward)


def relu(x):
    out = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    return _make(out, (x,), backward)


def sigmoid(x):
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * out * (1.0 - out))

    return _make(out, (x,), backward)


def tanh(x):
    out = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (1.0 - out * out))

    return _make(out, (x,), backward)


def absval(x):
    out = np.abs(x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * np.sign(x.data))

    return _make(out, (x,), backward)


ELEMENTWISE = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scale": scale,
}


# -- softmax -----------------------------------------------------------------


def softmax(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} out of bounds for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            # J^T g = s * (g - sum(g * s))
            dot = (g * out).sum(axis=axis, keepdims=True)
            x.accumulate_grad(out * (g - dot))

    return _make(out, (x,), backward)


# -- matmul ------------------------------------------------------------------


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul: operands must be at least rank 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner axes differ, {a.shape[-1]} (last of a) vs {b.shape[-2]} (second-last of b)"
        )
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            while ga.ndim > a.ndim:
                ga = ga.sum(axis=0)
            for i in range(ga.ndim - 2):
                if a.shape[i] == 1 and ga.shape[i] != 1:
                    ga = ga.sum(axis=i, keepdims=True)
            a.accumulate_grad(ga)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            while gb.ndim > b.ndim:
                gb = gb.sum(axis=0)
            for i in range(gb.ndim - 2):
                if b.shape[i] == 1 and gb.shape[i] != 1:
                    gb = gb.sum(axis=i, keepdims=True)
            b.accumulate_grad(gb)

    return _make(out, (a, b), backward)


# -- reductions --------------------------------------------------------------


def reduce_sum(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if np.ndim(out) == 0:
        out = np.asarray(out).reshape(1)

    def backward(g):
        if not x.requires_grad:
            return
        if axis is None:
            x.accumulate_grad(np.broadcast_to(g.reshape(()), x.shape).copy()
                              if g.size == 1 else g.reshape(x.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x.accumulate_grad(np.broadcast_to(gg, x.shape).copy())

    return _make(out, (x,), backward)


def reduce_mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        n = x.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- shape manipulation ------------------------------------------------------


def reshape(x, shape):
    out = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.reshape(x.shape))

    return _make(out, (x,), backward)


def transpose(x, axes):
    axes = tuple(axes)
    out = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g.transpose(inverse))

    return _make(out, (x,), backward)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat: need at least one tensor")
    dtype = tensors[0].dtype
    for t in tensors:
        if t.dtype != dtype:
            raise AutodiffError("concat: mixed dtypes")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(start), int(stop))
                t.accumulate_grad(g[tuple(sl)])

    return _make(out, tuple(tensors), backward)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow: [{start}, {start + length}) out of bounds for axis {axis} extent {x.shape[axis]}"
        )
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    out = np.ascontiguousarray(x.data[tuple(sl)])

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[tuple(sl)] = g
            x.accumulate_grad(full)

    return _make(out, (x,), backward)


def clamp_min(x, low):
    """max(x, low) with subgradient passing where x > low."""
    out = np.maximum(x.data, low)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > low))

    return _make(out, (x,), backward)


# -- constructors ------------------------------------------------------------


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)
