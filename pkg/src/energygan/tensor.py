"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while gradients are enabled appends a
:class:`Node` to the active :class:`Tape`. :func:`backward` replays that tape in
exact reverse order, so gradient propagation never needs a topological sort.

>>> with Tape():
...     x = Tensor([3.0], requires_grad=True)
...     (x * x).sum().backward()
>>> float(x.grad[0])
6.0
"""
from __future__ import annotations

import numpy as np

from energygan.errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class Tape:
    """Ordered record of executed differentiable operations.

    Used as a context manager it becomes the active tape and is cleared on
    exit, which releases every recorded intermediate.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, node):
        self.nodes.append(node)

    def clear(self):
        for node in self.nodes:
            node.release()
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.remove(self)
        self.clear()

    @staticmethod
    def active():
        return Tape._stack[-1]


Tape._stack.append(Tape())


class no_grad:
    """Disable recording inside the block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def grad_enabled():
    return _grad_enabled


class Node:
    __slots__ = ("op", "inputs", "out", "backward_fn", "tape")

    def __init__(self, op, inputs, out, backward_fn, tape):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn
        self.tape = tape

    def release(self):
        if self.out is not None and self.out._node is self:
            self.out._node = None
        self.inputs = ()
        self.out = None
        self.backward_fn = None


class Tensor:
    """N-dimensional real array with an optional gradient buffer.

    ``data`` keeps its dtype when it is already a float32/float64 array;
    anything else is converted to :data:`DEFAULT_DTYPE`.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
                arr = np.asarray(data)
            else:
                arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    # -- metadata -----------------------------------------------------------
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

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None if not self.requires_grad else np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Trainable tensor carrying its own Adam moment buffers."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.data = np.array(self.data, copy=True)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self):
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, step={self.step_count})"


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def record(op, out_data, inputs, backward_fn):
    """Wrap ``out_data`` in a Tensor and, if needed, put its node on the tape.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    out = Tensor(out_data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = Tape.active()
        node = Node(op, tuple(inputs), out, backward_fn, tape)
        out._node = node
        tape.record(node)
    return out


def backward(loss):
    """Populate ``.grad`` of every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls until zeroed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    seed = np.ones_like(loss.data)
    if loss._node is None:
        _accumulate(loss, seed)
        return
    tape = loss._node.tape
    nodes = tape.nodes
    stop = nodes.index(loss._node) if nodes[-1] is not loss._node else len(nodes) - 1
    grads = {id(loss): seed}
    for node in nodes[stop::-1]:
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp._node is None:
                _accumulate(inp, ig)
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = ig if prev is None else prev + ig
    for node in nodes:
        for inp in node.inputs:
            if inp.requires_grad and inp._node is None and inp.grad is None:
                inp.grad = np.zeros_like(inp.data)


def _accumulate(leaf, g):
    g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------------
def add(a, b):
    a, b = _pair(a, b)
    return record("add", a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return record("sub", a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return record("mul", a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return record("div", a.data / b.data, (a, b), bw)


def neg(a):
    return record("neg", -a.data, (a,), lambda g: (-g,))


def _pair(a, b):
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        if a.dtype != b.dtype:
            raise DimensionError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
        return a, b
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    return as_tensor(a, like=b), b


# -- reductions and reshapes ---------------------------------------------------
def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return record("sum", np.asarray(out, dtype=a.dtype), (a,), bw)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.sum(axis=axis, keepdims=keepdims) / a.dtype.type(count)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / a.dtype.type(count), a.shape).astype(a.dtype, copy=True),)

    return record("mean", np.asarray(out, dtype=a.dtype), (a,), bw)


def reshape(a, shape):
    return record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# -- pointwise functions -------------------------------------------------------
def square(a):
    return record("square", a.data * a.data, (a,), lambda g: (g * (2 * a.data),))


def tabs(a):
    return record("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def log(a):
    return record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return record("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def where(cond, a, b):
    """Select elementwise from ``a`` where the constant mask ``cond`` holds."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0).astype(g.dtype), a.shape),
                _unbroadcast(np.where(cond, 0, g).astype(g.dtype), b.shape))

    return record("where", np.where(cond, a.data, b.data), (a, b), bw)
