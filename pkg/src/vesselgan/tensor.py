"""Dense tensors with define-by-run reverse-mode differentiation.

Every operation on a tensor that requires a gradient records a node that
remembers its parents and a closure mapping the output gradient to the
parents' gradients.  :func:`backward` builds a :class:`Tape` (a topological
ordering of the recorded nodes) and replays it in reverse.  The tape is
consumed by the replay; calling backward on the same graph twice raises.
"""
import contextlib
import threading

import numpy as np

from .errors import DomainError, GraphError, ShapeError

_state = threading.local()


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used by builders and scalar constants."""
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


def grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """An n-d array (canonically N, C, H, W) with an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else get_default_dtype()
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._op is None

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad}{label})"

    # operator sugar -----------------------------------------------------
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
        return mul(self, -1.0)

    def __abs__(self):
        return abs_(self)

    def backward(self):
        backward(self)


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor(np.asarray(value, dtype=dtype))


def make_node(data, parents, backward_fn, op):
    """Wrap ``data`` as the output of ``op``; records the node only if needed."""
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


class Tape:
    """Topologically ordered list of the nodes that produced ``root``.

    Inputs always precede the nodes that consume them, so reversing the list
    gives a valid order for gradient propagation with each node visited once.
    """

    def __init__(self, root):
        self.root = root
        self.nodes = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]

    def ops(self):
        return [n._op for n in self.nodes if not n.is_leaf]


def leaves(tensor):
    """Leaf tensors requiring grad that ``tensor`` depends on."""
    if not tensor.requires_grad:
        return []
    return Tape(tensor).leaves()


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a single-element loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("this graph was already consumed by a previous backward pass")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    tape = Tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if node.is_leaf:
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.array(g, dtype=node.dtype, copy=True)
            else:
                node.grad += g
            continue
        if node._consumed:
            raise GraphError("double backward through a consumed node is not supported")
        if g is not None:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        node._consumed = True
        node._backward = None
    return tape


# elementwise ------------------------------------------------------------

def _binary_operands(a, b, op):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting is supported)")
    return a, b


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a, b):
    a, b = _binary_operands(a, b, "add")

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return make_node(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b):
    a, b = _binary_operands(a, b, "sub")

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return make_node(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b):
    a, b = _binary_operands(a, b, "mul")

    def grad_fn(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), grad_fn, "mul")


def abs_(a):
    """Absolute value; the subgradient at 0 is 0."""

    def grad_fn(g):
        return (g * np.sign(a.data),)

    return make_node(np.abs(a.data), (a,), grad_fn, "abs")


def log(a):
    bad = np.flatnonzero(~(a.data > 0))
    if bad.size:
        index = np.unravel_index(bad[0], a.shape)
        raise DomainError(f"log of non-positive value {a.data[index]!r} at index {tuple(int(i) for i in index)}")

    def grad_fn(g):
        return (g / a.data,)

    return make_node(np.log(a.data), (a,), grad_fn, "log")


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes only where the input is inside the interval."""

    def grad_fn(g):
        inside = (a.data >= lo) & (a.data <= hi)
        return (g * inside,)

    return make_node(np.clip(a.data, lo, hi), (a,), grad_fn, "clamp")


def mean(a):
    n = a.size

    def grad_fn(g):
        return (np.full(a.shape, g.reshape(()) / n, dtype=a.dtype),)

    return make_node(np.asarray(a.data.mean(dtype=np.float64), dtype=a.dtype), (a,), grad_fn, "mean")


def concat_channels(*tensors):
    if len(tensors) == 1 and isinstance(tensors[0], (list, tuple)):
        tensors = tuple(tensors[0])
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.data.ndim != 4 or (t.shape[0], *t.shape[2:]) != (ref[0], *ref[2:]):
            raise ShapeError(f"concat_channels: shapes {ref} and {t.shape} disagree outside the channel axis")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=1))

    return make_node(np.concatenate([t.data for t in tensors], axis=1), tensors, grad_fn, "concat_channels")


# activations ------------------------------------------------------------

def relu(a):
    def grad_fn(g):
        return (g * (a.data > 0),)

    return make_node(np.maximum(a.data, 0), (a,), grad_fn, "relu")


def leaky_relu(a, alpha=0.2):
    if not 0 < alpha < 1:
        raise DomainError(f"leaky_relu slope must lie in (0, 1), got {alpha}")
    slope = np.where(a.data > 0, 1, alpha).astype(a.dtype)

    def grad_fn(g):
        return (g * slope,)

    return make_node(a.data * slope, (a,), grad_fn, "leaky_relu")


def sigmoid(a):
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)

    def grad_fn(g):
        return (g * out * (1 - out),)

    return make_node(out, (a,), grad_fn, "sigmoid")


def tanh(a):
    out = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1 - out * out),)

    return make_node(out, (a,), grad_fn, "tanh")


def activation(a, kind, alpha=0.2):
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    raise ValueError(f"unknown activation {kind!r}")
