"""Dense float64 tensors with a dynamic reverse-mode tape.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent.  The tape is
rebuilt on every forward pass.  Broadcasting is limited to Python scalars and
0-d tensors; bias addition has its own op (:func:`add_bias`) so every gradient
rule stays explicit.

>>> p = Tensor([1.0, 2.0], requires_grad=True)
>>> backward((p * p).sum())
>>> p.grad
array([2., 4.])
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, TrainingError

__all__ = [
    "Tensor",
    "AdamState",
    "Adam",
    "adam_step",
    "add",
    "add_bias",
    "backward",
    "concat",
    "flip",
    "matmul",
    "mul",
    "reshape",
    "sigmoid",
    "slice_last",
    "stack",
    "sub",
    "tanh",
    "zero_grad",
]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data, parents, backward_fn, op):
        """Register a result on the tape.

        ``backward_fn(g)`` must return one gradient (or ``None``) per parent.
        """
        # one cheap pass: a NaN or inf anywhere makes the sum non-finite
        if not np.isfinite(np.sum(data)) and not np.all(np.isfinite(data)):
            raise TrainingError(f"{op}: produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        parents = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __float__(self):
        if self.data.size != 1:
            raise ContractError(f"cannot convert tensor of shape {self.shape} to float")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

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

    def sum(self):
        return tensor_sum(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(t):
    return t.data.ndim == 0


def _binary_shapes(a, b, opname):
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g, t):
    # gradient of a scalar operand broadcast against an array
    return g.sum() if _is_scalar(t) and g.ndim > 0 else g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    return Tensor.from_op(
        a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)), "add"
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    return Tensor.from_op(
        a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)), "sub"
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _reduce_to(g * bd, a) if a.requires_grad else None,
            _reduce_to(g * ad, b) if b.requires_grad else None,
        )

    return Tensor.from_op(ad * bd, (a, b), bw, "mul")


def sigmoid(a):
    a = as_tensor(a)
    s = 0.5 + 0.5 * np.tanh(0.5 * a.data)
    return Tensor.from_op(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return Tensor.from_op(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def matmul(a, b):
    """``(n, k) @ (k, m)`` or batched ``(B, n, k) @ (k, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (2, 3) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return Tensor.from_op(ad @ bd, (a, b), bw, "matmul")


def add_bias(a, bias):
    """Add a vector along the last axis of ``a``."""
    a, bias = as_tensor(a), as_tensor(bias)
    if bias.ndim != 1 or a.shape[-1] != bias.shape[0]:
        raise DimensionError(f"add_bias: bias {bias.shape} does not fit {a.shape}")
    lead = tuple(range(a.ndim - 1))
    return Tensor.from_op(
        a.data + bias.data, (a, bias), lambda g: (g, g.sum(axis=lead)), "add_bias"
    )


def tensor_sum(a):
    a = as_tensor(a)
    shape = a.shape
    return Tensor.from_op(
        np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum"
    )


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return Tensor.from_op(data, tensors, bw, "concat")


def slice_last(a, lo, hi):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[..., lo:hi] = g
        return (out,)

    return Tensor.from_op(a.data[..., lo:hi].copy(), (a,), bw, "slice")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {sorted(shapes)}")
    n = len(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)
    return Tensor.from_op(
        data,
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
        "stack",
    )


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from None
    return Tensor.from_op(data, (a,), lambda g: (g.reshape(old),), "reshape")


def flip(a, axis):
    a = as_tensor(a)
    return Tensor.from_op(
        np.flip(a.data, axis=axis).copy(),
        (a,),
        lambda g: (np.flip(g, axis=axis).copy(),),
        "flip",
    )


def _topological(root):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss):
    """Accumulate ``d loss / d t`` into ``t.grad`` for every tensor on the tape.

    Leaf gradients accumulate across calls; clear them with :func:`zero_grad`
    before reusing parameters in a new graph.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
        raise ContractError(f"backward needs a scalar loss, got {shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            k = id(parent)
            grads[k] = pg if k not in grads else grads[k] + pg


def zero_grad(params):
    for p in params:
        p.grad = None


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected Adam update of ``params`` (name -> array) in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


class Adam:
    """Adam over a fixed dict of parameter tensors."""

    def __init__(self, params, lr=0.0005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        zero_grad(self.params.values())

    def step(self):
        adam_step(
            {k: p.data for k, p in self.params.items()},
            {k: p.grad for k, p in self.params.items()},
            self.state,
        )
