"""Tape-based reverse-mode differentiation with recorded forward tangents.

Nodes hold numpy arrays (scalars are 0-d arrays). Every primitive records its
value and the vector-Jacobian products of its operands on the active tape.
When an operand carries a forward tangent, the primitive also computes its
own tangent from the closed primitive set, and those tangent computations
are recorded on the same tape. Reverse-mode through a tangent node
therefore gives mixed second derivatives: ``reverse_grad(input_derivative(f,
x), theta)`` is d^2 f / (dtheta dx).

Operands that are not nodes (floats, arrays) are treated as constants.
"""

import threading
from contextlib import contextmanager

import numpy as np

from .errors import ArgumentError, EvaluationError

__all__ = [
    "Node", "Tape", "constant", "record", "reverse_grad", "input_derivative", "gradcheck",
    "add", "sub", "mul", "div", "neg", "power", "exp", "ln", "sin", "cos", "tanh",
    "softplus", "sigmoid", "maximum", "absolute", "sum", "dot", "transpose", "reshape",
    "concat", "take", "square", "mean", "PRIMITIVES",
]

_state = threading.local()


def _forward_enabled():
    return getattr(_state, "forward", True)


@contextmanager
def _no_tangents():
    prev = _forward_enabled()
    _state.forward = False
    try:
        yield
    finally:
        _state.forward = prev


class Node:
    __slots__ = ("value", "tangent", "parents", "op", "tape", "index", "requires_grad")

    def __init__(self, value, op="const", parents=(), tape=None, requires_grad=False):
        self.value = value
        self.tangent = None
        self.parents = parents
        self.op = op
        self.tape = tape
        self.index = -1
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return dot(self, other)

    def __getitem__(self, rows):
        return take(self, rows)


class Tape:
    """Append-only node arena; insertion order is a topological order.

    Use as a context manager to make it the tape that new leaves land on, or
    call :meth:`var` directly.
    """

    def __init__(self):
        self.nodes = []

    def _append(self, node):
        node.tape = self
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    def var(self, value, tangent=None):
        node = self._append(Node(np.array(value, dtype=np.float64), "leaf", (), requires_grad=True))
        if tangent is not None:
            node.tangent = constant(np.broadcast_to(np.asarray(tangent, np.float64), node.value.shape))
        return node

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False


def current_tape():
    stack = getattr(_state, "tapes", None)
    if not stack:
        raise ArgumentError("no active tape")
    return stack[-1]


def var(value, tangent=None):
    """Leaf on the active tape."""
    return current_tape().var(value, tangent)


def constant(value):
    return Node(np.array(value, dtype=np.float64))


def _lift(x):
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(op, value, inputs, vjps, tangent_fn=None):
    """Create the result node, wire reverse partials and propagate tangents."""
    value = np.asarray(value, dtype=np.float64)
    tape = None
    for x in inputs:
        if x.tape is not None:
            tape = x.tape
            break
    requires = any(x.requires_grad for x in inputs)
    node = Node(value, op)
    if requires:
        node.requires_grad = True
        node.parents = tuple((x, f) for x, f in zip(inputs, vjps) if x.requires_grad)
        tape._append(node)
    if tangent_fn is not None and _forward_enabled():
        tangents = [x.tangent for x in inputs]
        if any(t is not None for t in tangents):
            with _no_tangents():
                node.tangent = tangent_fn(node, *tangents)
    return node


def _tsum(*terms):
    terms = [t for t in terms if t is not None]
    if not terms:
        return None
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


# ---------------------------------------------------------------- primitives

def add(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.value.shape, b.value.shape
    return _make(
        "add", a.value + b.value, (a, b),
        (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)),
        lambda out, ta, tb: _tsum(ta, tb),
    )


def sub(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.value.shape, b.value.shape
    return _make(
        "sub", a.value - b.value, (a, b),
        (lambda g: _unbroadcast(g, sa), lambda g: -_unbroadcast(g, sb)),
        lambda out, ta, tb: _tsum(ta, None if tb is None else neg(tb)),
    )


def neg(a):
    a = _lift(a)
    return _make("neg", -a.value, (a,), (lambda g: -g,), lambda out, ta: neg(ta))


def mul(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    return _make(
        "mul", av * bv, (a, b),
        (lambda g: _unbroadcast(g * bv, av.shape), lambda g: _unbroadcast(g * av, bv.shape)),
        lambda out, ta, tb: _tsum(None if ta is None else mul(ta, b), None if tb is None else mul(a, tb)),
    )


def div(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise EvaluationError("division by zero")
    out = av / bv
    return _make(
        "div", out, (a, b),
        (lambda g: _unbroadcast(g / bv, av.shape),
         lambda g: _unbroadcast(-g * out / bv, bv.shape)),
        lambda node, ta, tb: _tsum(
            None if ta is None else div(ta, b),
            None if tb is None else neg(div(mul(node, tb), b)),
        ),
    )


def power(a, p):
    """``a ** p`` for a constant real exponent."""
    a = _lift(a)
    if isinstance(p, Node):
        raise ArgumentError("power takes a constant exponent")
    p = float(p)
    av = a.value
    if p != int(p) and np.any(av < 0):
        raise EvaluationError("non-integer power of a negative base")
    if p < 0 and np.any(av == 0):
        raise EvaluationError("negative power of zero")
    return _make(
        "power", av ** p, (a,),
        (lambda g: g * p * av ** (p - 1),),
        lambda out, ta: mul(mul(p, power(a, p - 1)), ta) if p != 1 else ta,
    )


def square(a):
    return power(a, 2)


def exp(a):
    a = _lift(a)
    with np.errstate(over="raise"):
        try:
            out = np.exp(a.value)
        except FloatingPointError as exc:
            raise EvaluationError("exp overflow") from exc
    return _make("exp", out, (a,), (lambda g: g * out,), lambda node, ta: mul(node, ta))


def ln(a):
    a = _lift(a)
    av = a.value
    if np.any(av <= 0):
        raise EvaluationError("ln of a non-positive value")
    return _make("ln", np.log(av), (a,), (lambda g: g / av,), lambda out, ta: div(ta, a))


def sin(a):
    a = _lift(a)
    av = a.value
    return _make("sin", np.sin(av), (a,), (lambda g: g * np.cos(av),), lambda out, ta: mul(cos(a), ta))


def cos(a):
    a = _lift(a)
    av = a.value
    return _make("cos", np.cos(av), (a,), (lambda g: -g * np.sin(av),),
                 lambda out, ta: neg(mul(sin(a), ta)))


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.value)
    return _make("tanh", out, (a,), (lambda g: g * (1.0 - out * out),),
                 lambda node, ta: mul(sub(1.0, mul(node, node)), ta))


def _softplus_parts(v):
    e = np.exp(-np.abs(v))
    sp = np.maximum(v, 0.0) + np.log1p(e)
    r = 1.0 / (1.0 + e)
    sig = np.where(v >= 0, r, e * r)
    return sp, sig


def softplus(a):
    """log(1 + e^a), evaluated stably."""
    a = _lift(a)
    out, sig = _softplus_parts(a.value)
    return _make("softplus", out, (a,), (lambda g: g * sig,),
                 lambda node, ta: mul(_sigmoid_with(a, sig), ta))


def _sigmoid_with(a, sig):
    return _make("sigmoid", sig, (a,), (lambda g: g * sig * (1.0 - sig),),
                 lambda node, ta: mul(mul(node, sub(1.0, node)), ta))


def sigmoid(a):
    """Logistic function 1 / (1 + e^-a)."""
    a = _lift(a)
    return _sigmoid_with(a, _softplus_parts(a.value)[1])


def maximum(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    mask = (av >= bv).astype(np.float64)
    return _make(
        "max", np.maximum(av, bv), (a, b),
        (lambda g: _unbroadcast(g * mask, av.shape), lambda g: _unbroadcast(g * (1.0 - mask), bv.shape)),
        lambda out, ta, tb: _tsum(None if ta is None else mul(mask, ta),
                                  None if tb is None else mul(1.0 - mask, tb)),
    )


def absolute(a):
    a = _lift(a)
    sign = np.sign(a.value)
    return _make("abs", np.abs(a.value), (a,), (lambda g: g * sign,), lambda out, ta: mul(sign, ta))


def sum(a, axis=None, keepdims=False):
    a = _lift(a)
    shape = a.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _make("sum", a.value.sum(axis=axis, keepdims=keepdims), (a,), (vjp,),
                 lambda out, ta: sum(ta, axis=axis, keepdims=keepdims))


def mean(a, axis=None):
    a = _lift(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return div(sum(a, axis=axis), float(n))


def dot(a, b):
    """Matrix/vector product with ``np.matmul`` semantics for 1-D and 2-D operands."""
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ArgumentError("dot supports 1-D and 2-D operands")
    if av.shape[-1] != bv.shape[0]:
        raise ArgumentError(f"dot shape mismatch {av.shape} @ {bv.shape}")

    def vjp_a(g):
        if bv.ndim == 1:
            return np.multiply.outer(g, bv) if av.ndim == 2 else g * bv
        return g @ bv.T

    def vjp_b(g):
        if av.ndim == 1:
            return np.multiply.outer(av, g) if bv.ndim == 2 else g * av
        return av.T @ g if bv.ndim == 2 else av.T @ g

    return _make(
        "dot", av @ bv, (a, b), (vjp_a, vjp_b),
        lambda out, ta, tb: _tsum(None if ta is None else dot(ta, b), None if tb is None else dot(a, tb)),
    )


def transpose(a):
    a = _lift(a)
    return _make("transpose", a.value.T, (a,), (lambda g: g.T,), lambda out, ta: transpose(ta))


def reshape(a, shape):
    a = _lift(a)
    old = a.value.shape
    return _make("reshape", a.value.reshape(shape), (a,), (lambda g: g.reshape(old),),
                 lambda out, ta: reshape(ta, shape))


def concat(nodes, axis=-1):
    nodes = [_lift(x) for x in nodes]
    values = [x.value for x in nodes]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def make_vjp(k):
        return lambda g: np.split(g, bounds, axis=axis)[k]

    def tangent(node, *ts):
        if all(t is None for t in ts):
            return None
        parts = [t if t is not None else constant(np.zeros_like(v)) for t, v in zip(ts, values)]
        return concat(parts, axis=axis)

    return _make("concat", out, tuple(nodes), tuple(make_vjp(k) for k in range(len(nodes))), tangent)


def take(a, rows):
    """Rows of ``a`` along axis 0 (repeats allowed); gradients scatter-add back."""
    a = _lift(a)
    rows = np.asarray(rows, dtype=np.int64)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, rows, g)
        return out

    return _make("take", a.value[rows], (a,), (vjp,), lambda out, ta: take(ta, rows))


PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "power": power,
    "exp": exp, "ln": ln, "sin": sin, "cos": cos, "tanh": tanh, "softplus": softplus,
    "sigmoid": sigmoid,
    "max": maximum, "abs": absolute, "sum": sum, "dot": dot,
    "transpose": transpose, "reshape": reshape, "concat": concat, "take": take,
}


def record(op, *inputs, **kwargs):
    """Apply the named primitive to ``inputs`` on their tape."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ArgumentError(f"unknown primitive {op!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------- derivatives

def reverse_grad(output, wrt):
    """Gradient of a scalar ``output`` with respect to each node in ``wrt``.

    Returns a list of arrays shaped like the corresponding node values (floats
    for scalar nodes). The tape is not modified, so repeated calls agree.
    """
    if output.value.size != 1:
        raise ArgumentError("reverse_grad needs a scalar output")
    wrt = list(wrt)
    tape = output.tape
    for w in wrt:
        if not isinstance(w, Node) or w.tape is None or (tape is not None and w.tape is not tape):
            raise ArgumentError("gradient requested for a node that is not on the output's tape")
    grads = {}
    if tape is not None and output.requires_grad:
        wanted = {w.index for w in wrt}
        lowest = min(wanted) if wanted else 0
        grads[output.index] = np.ones_like(output.value)
        nodes = tape.nodes
        for k in range(output.index, lowest - 1, -1):
            g = grads.get(k)
            if g is None:
                continue
            node = nodes[k]
            if k not in wanted:
                del grads[k]
            for parent, vjp in node.parents:
                pg = vjp(g)
                j = parent.index
                if j in grads:
                    grads[j] = grads[j] + pg
                else:
                    grads[j] = pg
    out = []
    for w in wrt:
        g = grads.get(w.index)
        if g is None:
            g = np.zeros_like(w.value)
        g = np.asarray(g, dtype=np.float64).reshape(w.value.shape)
        out.append(float(g) if g.ndim == 0 else g)
    return out


def input_derivative(f, x):
    """Node valued df/dx, obtained by seeding x's tangent with ones.

    ``x`` must be a leaf. ``f`` is called once with ``x`` and must return either
    a scalar or an array shaped like ``x`` whose k-th element depends only on
    the k-th element of ``x``; the result is then the elementwise derivative.
    The returned node stays on the tape and can be differentiated further.
    """
    if not isinstance(x, Node) or x.op not in ("leaf", "const") or x.parents:
        raise ArgumentError("input_derivative needs a leaf node")
    prev = x.tangent
    x.tangent = constant(np.ones_like(x.value))
    try:
        out = f(x)
    finally:
        x.tangent = prev
    out = _lift(out)
    if out.value.size != 1 and out.value.shape != x.value.shape:
        raise ArgumentError("input_derivative needs a scalar (or elementwise) function")
    if out.tangent is None:
        return constant(np.zeros_like(out.value))
    return out.tangent


def gradcheck(f, point, h=1e-6):
    """Largest |analytic - central difference| / max(1, |analytic|) over coordinates.

    ``f`` maps a leaf node to a scalar node.
    """
    point = np.array(point, dtype=np.float64)
    tape = Tape()
    x = tape.var(point)
    y = _lift(f(x))
    if not np.all(np.isfinite(y.value)):
        raise EvaluationError("non-finite function value")
    if y.tape is None:
        analytic = np.zeros_like(point)
    else:
        (analytic,) = reverse_grad(y, [x])
    analytic = np.asarray(analytic, dtype=np.float64).reshape(point.shape)
    worst = 0.0
    for k in np.ndindex(*point.shape):
        hi, lo = point.copy(), point.copy()
        hi[k] += h
        lo[k] -= h
        fp = np.asarray(_lift(f(constant(hi))).value).item()
        fm = np.asarray(_lift(f(constant(lo))).value).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError("non-finite value in finite-difference stencil")
        fd = (fp - fm) / (2 * h)
        a = analytic[k]
        if not np.isfinite(a):
            raise EvaluationError("non-finite analytic gradient")
        worst = max(worst, abs(a - fd) / max(1.0, abs(a)))
    return worst
