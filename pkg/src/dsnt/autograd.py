"""Minimal reverse-mode differentiation over dense float64 arrays.

Every value that takes part in training is a :class:`Tensor`.  Operations on
tensors record a node (parents plus a local gradient rule) whenever gradient
recording is enabled and at least one input requires a gradient.  Calling
:func:`backward` on a scalar walks those nodes in reverse topological order
and adds into ``grad`` of every reachable leaf with ``requires_grad=True``.

Elementwise operations broadcast numpy-style; the backward rule sums the
upstream gradient back down to each operand's shape.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DimensionError, NonFiniteError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "as_tensor",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "zero_grad",
    "matmul",
    "softmax",
    "log_softmax",
    "logsumexp",
    "softplus",
    "stack",
    "concat",
    "masked_max",
    "logdet",
    "check_gradients",
    "GradCheckReport",
]

_GRAD_ENABLED = True


def is_grad_enabled():
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (inference and finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    """Dense float64 array participating in the differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_rule", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._rule = None
        self.name = name

    # construction -------------------------------------------------------
    @classmethod
    def _from_op(cls, data, parents, rule):
        out = cls.__new__(cls)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("operation produced a non-finite value")
        out.data = data
        out.grad = None
        out.name = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._rule = rule
        else:
            out.requires_grad = False
            out._parents = ()
            out._rule = None
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

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data.copy())

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{rg})"

    # arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._from_op(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._from_op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._from_op(
            a / b,
            (self, other),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise ContractError("tensor exponents are not supported")
        a = self.data
        p = float(p)
        return Tensor._from_op(a**p, (self,), lambda g: (g * p * a ** (p - 1.0),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        a_shape = self.shape

        def rule(g):
            full = np.zeros(a_shape)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._from_op(np.array(self.data[idx], dtype=np.float64), (self,), rule)

    # shape ----------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a_shape = self.shape
        return Tensor._from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(a_shape),))

    def transpose(self):
        """Swap the last two axes."""
        return Tensor._from_op(np.swapaxes(self.data, -1, -2), (self,), lambda g: (np.swapaxes(g, -1, -2),))

    @property
    def T(self):
        return self.transpose()

    # reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a_shape = self.shape

        def rule(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a_shape).copy(),)

        return Tensor._from_op(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), rule)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # elementwise functions ------------------------------------------------
    def exp(self):
        with np.errstate(over="ignore"):
            e = np.exp(self.data)
        return Tensor._from_op(e, (self,), lambda g: (g * e,))

    def log(self):
        a = self.data
        if np.any(a <= 0):
            raise ContractError("log of a non-positive value")
        return Tensor._from_op(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self):
        t = np.tanh(self.data)
        return Tensor._from_op(t, (self,), lambda g: (g * (1.0 - t * t),))

    def relu(self):
        m = self.data > 0
        return Tensor._from_op(self.data * m, (self,), lambda g: (g * m,))

    def sqrt(self):
        s = np.sqrt(self.data)
        return Tensor._from_op(s, (self,), lambda g: (g * 0.5 / s,))

    def abs(self):
        sgn = np.sign(self.data)
        return Tensor._from_op(np.abs(self.data), (self,), lambda g: (g * sgn,))


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitive functions


def matmul(a, b):
    """Matrix product with numpy ``matmul`` semantics (batched, 1-D promotion)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs at least 1-D operands, got {a.shape} and {b.shape}")
    k_a = a.shape[-1]
    k_b = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if k_a != k_b:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def rule(g):
        A2 = A[None, :] if A.ndim == 1 else A
        B2 = B[:, None] if B.ndim == 1 else B
        G = g
        if A.ndim == 1:
            G = np.expand_dims(G, -2)
        if B.ndim == 1:
            G = np.expand_dims(G, -1)
        gA = G @ np.swapaxes(B2, -1, -2)
        gB = np.swapaxes(A2, -1, -2) @ G
        if A.ndim == 1:
            gA = gA.reshape(gA.shape[:-2] + (gA.shape[-1],))
            gA = _unbroadcast(gA, A.shape)
        else:
            gA = _unbroadcast(gA, A.shape)
        if B.ndim == 1:
            gB = gB.reshape(gB.shape[:-2] + (gB.shape[-2],))
            gB = _unbroadcast(gB, B.shape)
        else:
            gB = _unbroadcast(gB, B.shape)
        return gA, gB

    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(A @ B, dtype=np.float64)
    return Tensor._from_op(out, (a, b), rule)


def softmax(v, axis=-1):
    """Softmax with max subtraction; shift invariant and overflow safe."""
    v = as_tensor(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise DimensionError("softmax of an empty input")
    x = v.data - v.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (v,), rule)


def _log_norm(x, axis):
    """``log(sum(exp(x)))`` for ``x`` whose maximum along ``axis`` is 0.

    The maximum contributes exactly 1, so the rest goes through ``log1p``
    and tiny tail probabilities keep full relative precision.
    """
    e = np.exp(x)
    first = np.expand_dims(np.argmax(x, axis=axis), axis)
    np.put_along_axis(e, first, 0.0, axis=axis)
    return np.log1p(e.sum(axis=axis, keepdims=True))


def log_softmax(v, axis=-1):
    v = as_tensor(v)
    if v.ndim == 0 or v.shape[axis] == 0:
        raise DimensionError("log_softmax of an empty input")
    x = v.data - v.data.max(axis=axis, keepdims=True)
    out = x - _log_norm(x, axis)
    s = np.exp(out)

    def rule(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (v,), rule)


def logsumexp(v, axis=-1):
    v = as_tensor(v)
    m = v.data.max(axis=axis, keepdims=True)
    x = v.data - m
    lse = _log_norm(x, axis)
    out = (lse + m).squeeze(axis)
    s = np.exp(x - lse)

    def rule(g):
        return (np.expand_dims(g, axis) * s,)

    return Tensor._from_op(out, (v,), rule)


def softplus(v):
    """``log(1 + exp(v))`` evaluated without overflow."""
    v = as_tensor(v)
    x = v.data
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return Tensor._from_op(out, (v,), lambda g: (g * sig,))


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack of an empty sequence")
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {sorted(shapes)}")
    data = np.stack([t.data for t in ts], axis=axis)

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor._from_op(data, tuple(ts), rule)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._from_op(data, tuple(ts), rule)


def masked_max(x, mask, axis):
    """Maximum over ``axis`` restricted to entries where ``mask`` is true.

    Exact ties share the gradient equally, which is the subgradient central
    differences measure at the tie.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not np.all(mask.any(axis=axis)):
        raise DimensionError("masked_max over a slice with no valid entries")
    filled = np.where(mask, x.data, -np.inf)
    out = filled.max(axis=axis)
    winners = filled == np.expand_dims(out, axis)
    share = winners / winners.sum(axis=axis, keepdims=True)

    def rule(g):
        return (share * np.expand_dims(g, axis),)

    return Tensor._from_op(out, (x,), rule)


def logdet(a):
    """Log-determinant of (a batch of) matrices with positive determinant."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"logdet needs square matrices, got {a.shape}")
    sign, ld = np.linalg.slogdet(a.data)
    if np.any(sign <= 0):
        raise ContractError("logdet of a matrix with non-positive determinant")
    inv_t = np.swapaxes(np.linalg.inv(a.data), -1, -2)
    return Tensor._from_op(np.asarray(ld, dtype=np.float64), (a,), lambda g: (np.asarray(g)[..., None, None] * inv_t,))


# ---------------------------------------------------------------------------
# tape and backward pass


@dataclass
class Tape:
    """Recorded operations reachable from an output, inputs before outputs."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack_ = [(out, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))
        return cls(order)


def backward(loss):
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Gradients accumulate; call :func:`zero_grad` between steps.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError(f"backward needs a scalar tensor, got shape {getattr(loss, 'shape', None)}")
    if not loss.requires_grad:
        return
    tape = Tape.from_output(loss)
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._rule(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    max_rel_error: list
    flagged: list
    rtol: float

    @property
    def passed(self):
        return not any(self.flagged)

    @property
    def worst(self):
        return max(self.max_rel_error) if self.max_rel_error else 0.0


def check_gradients(f, leaves, h=1e-5, rtol=1e-4, atol=1e-6):
    """Compare analytic gradients of ``f()`` with central differences.

    ``f`` takes no arguments and builds a scalar from ``leaves``.  The relative
    error of each entry is ``|a - n| / max(|a|, |n|, atol)``; ``atol`` keeps
    entries whose true gradient is zero from dividing by round-off.
    Returns one maximum per leaf plus the flat indices exceeding ``rtol``.
    """
    if h <= 0:
        raise ContractError("finite-difference step must be positive")
    zero_grad(leaves)
    backward(f())
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in leaves]

    max_err, flagged = [], []
    with no_grad():
        for p, a in zip(leaves, analytic):
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            num = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f().item()
                flat[i] = orig - h
                fm = f().item()
                flat[i] = orig
                num[i] = (fp - fm) / (2.0 * h)
            a = a.reshape(-1)
            err = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), atol)
            max_err.append(float(err.max()) if err.size else 0.0)
            flagged.append([int(i) for i in np.flatnonzero(err > rtol)])
    zero_grad(leaves)
    return GradCheckReport(max_err, flagged, rtol)
