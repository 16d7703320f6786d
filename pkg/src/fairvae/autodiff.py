"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built eagerly: every operation returns a ``Node`` holding the
forward value, a gradient buffer of the same shape, and a closure that
propagates upstream gradients to its parents. ``backward`` on a scalar root
fills ``.grad`` on every reachable node. Gradients accumulate, so shared
subexpressions are handled correctly.

Everything is float64 and single-threaded per graph; there is no broadcasting
machinery beyond what the ops here need (matrix/vector shapes, row-wise
reductions, bias rows).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

LOG_FLOOR = 1e-12  # probabilities are clipped to [LOG_FLOOR, 1] before log


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform."""


def tensor(data, ctx: str = "tensor") -> np.ndarray:
    """Convert to a float64 array, rejecting NaN/Inf."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {ctx}")
    return arr


class Node:
    """A value in the computation graph together with its gradient buffer."""

    __slots__ = ("value", "grad", "op", "parents", "_backward")

    def __init__(self, value, op: str = "leaf", parents: tuple = ()):
        self.value = tensor(value, ctx=op)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self.parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Node":
        """A new leaf with a copy of this value; gradients stop here."""
        return Node(self.value.copy(), op="detach")

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


class Parameter(Node):
    """A named leaf that an optimizer may update in place."""

    __slots__ = ("name", "trainable")

    def __init__(self, value, name: str, trainable: bool = True):
        super().__init__(value, op="param")
        self.name = name
        self.trainable = trainable

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x, op="const")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast to reach ``grad.shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic primitives


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value + b.value, op="add", parents=(a, b))

    def _bw(up):
        a.grad += _unbroadcast(up, a.value.shape)
        b.grad += _unbroadcast(up, b.value.shape)

    out._backward = _bw
    return out


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value - b.value, op="sub", parents=(a, b))

    def _bw(up):
        a.grad += _unbroadcast(up, a.value.shape)
        b.grad -= _unbroadcast(up, b.value.shape)

    out._backward = _bw
    return out


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = Node(a.value * b.value, op="mul", parents=(a, b))

    def _bw(up):
        a.grad += _unbroadcast(b.value * up, a.value.shape)
        b.grad += _unbroadcast(a.value * up, b.value.shape)

    out._backward = _bw
    return out


def scale(a, c: float) -> Node:
    a = as_node(a)
    out = Node(a.value * c, op="scale", parents=(a,))

    def _bw(up):
        a.grad += c * up

    out._backward = _bw
    return out


def square(a) -> Node:
    a = as_node(a)
    out = Node(a.value * a.value, op="square", parents=(a,))

    def _bw(up):
        a.grad += 2.0 * a.value * up

    out._backward = _bw
    return out


def absolute(a) -> Node:
    a = as_node(a)
    out = Node(np.abs(a.value), op="abs", parents=(a,))

    def _bw(up):
        a.grad += np.sign(a.value) * up

    out._backward = _bw
    return out


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(
            f"matmul shapes do not conform: {a.value.shape} x {b.value.shape}"
        )
    out = Node(a.value @ b.value, op="matmul", parents=(a, b))

    def _bw(up):
        a.grad += up @ b.value.T
        b.grad += a.value.T @ up

    out._backward = _bw
    return out


def sum_rows(a) -> Node:
    """Sum over axis 1: Node[n x d] -> Node[n]."""
    a = as_node(a)
    out = Node(a.value.sum(axis=1), op="sum_rows", parents=(a,))

    def _bw(up):
        a.grad += up[:, None]

    out._backward = _bw
    return out


def mean_all(a) -> Node:
    """Mean over every entry -> scalar Node."""
    a = as_node(a)
    out = Node(a.value.mean(), op="mean", parents=(a,))

    def _bw(up):
        a.grad += up / a.value.size

    out._backward = _bw
    return out


def column(a, j: int) -> Node:
    """Extract column j of a 2-D node -> Node[n]."""
    a = as_node(a)
    out = Node(a.value[:, j], op="column", parents=(a,))

    def _bw(up):
        a.grad[:, j] += up

    out._backward = _bw
    return out


def concat_columns(parts) -> Node:
    """Concatenate 2-D nodes along axis 1."""
    parts = [as_node(p) for p in parts]
    out = Node(np.concatenate([p.value for p in parts], axis=1),
               op="concat", parents=tuple(parts))
    widths = [p.value.shape[1] for p in parts]

    def _bw(up):
        start = 0
        for p, w in zip(parts, widths):
            p.grad += up[:, start:start + w]
            start += w

    out._backward = _bw
    return out


def log_clipped(a, lo: float = LOG_FLOOR, hi: float = 1.0) -> Node:
    """log of a clipped to [lo, hi]; gradient is zero outside the clip range."""
    a = as_node(a)
    clipped = np.clip(a.value, lo, hi)
    out = Node(np.log(clipped), op="log", parents=(a,))
    inside = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)

    def _bw(up):
        a.grad += inside * up / clipped

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# neural-network ops


def dense(x, weight: Parameter, bias: Parameter) -> Node:
    """Affine map: x @ weight + bias, bias broadcast over rows."""
    x = as_node(x)
    if x.value.ndim != 2 or x.value.shape[1] != weight.value.shape[0]:
        raise ShapeMismatch(
            f"dense: input {x.value.shape} does not match weight {weight.value.shape}"
        )
    if bias.value.shape != (weight.value.shape[1],):
        raise ShapeMismatch(
            f"dense: bias {bias.value.shape} does not match weight {weight.value.shape}"
        )
    out = Node(x.value @ weight.value + bias.value, op="dense",
               parents=(x, weight, bias))

    def _bw(up):
        x.grad += up @ weight.value.T
        weight.grad += x.value.T @ up
        bias.grad += up.sum(axis=0)

    out._backward = _bw
    return out


_ACTIVATIONS = {
    "relu": (lambda v: np.maximum(v, 0.0), lambda v, out: (v > 0).astype(np.float64)),
    "tanh": (np.tanh, lambda v, out: 1.0 - out * out),
    "softplus": (lambda v: np.logaddexp(0.0, v), lambda v, out: expit(v)),
    "sigmoid": (expit, lambda v, out: out * (1.0 - out)),
}


def activation(x, kind: str) -> Node:
    x = as_node(x)
    try:
        fwd, deriv = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None
    out = Node(fwd(x.value), op=kind, parents=(x,))

    def _bw(up):
        x.grad += deriv(x.value, out.value) * up

    out._backward = _bw
    return out


def relu(x):
    return activation(x, "relu")


def tanh(x):
    return activation(x, "tanh")


def softplus(x):
    return activation(x, "softplus")


def sigmoid(x):
    return activation(x, "sigmoid")


def softmax(x) -> Node:
    """Row-wise softmax with max-subtraction for stability."""
    x = as_node(x)
    if x.value.ndim != 2 or x.value.shape[1] < 2:
        raise ShapeMismatch(f"softmax expects n x k with k >= 2, got {x.value.shape}")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = Node(p, op="softmax", parents=(x,))

    def _bw(up):
        inner = (up * p).sum(axis=1, keepdims=True)
        x.grad += p * (up - inner)

    out._backward = _bw
    return out


def gradient_reversal(x, lam: float) -> Node:
    """Identity forward; backward multiplies the upstream gradient by -lam."""
    if lam < 0:
        raise ValueError(f"gradient reversal strength must be >= 0, got {lam}")
    x = as_node(x)
    out = Node(x.value, op="grad_reverse", parents=(x,))

    def _bw(up):
        x.grad += -lam * up

    out._backward = _bw
    return out


def reparameterize(mu, sigma, epsilon) -> Node:
    """h = epsilon * sigma + mu with caller-supplied noise."""
    mu, sigma = as_node(mu), as_node(sigma)
    if np.any(sigma.value < 0):
        raise ValueError("reparameterize: sigma entries must be >= 0")
    eps = tensor(epsilon, ctx="epsilon")
    if eps.shape != mu.value.shape or sigma.value.shape != mu.value.shape:
        raise ShapeMismatch(
            f"reparameterize shapes differ: mu {mu.value.shape}, "
            f"sigma {sigma.value.shape}, epsilon {eps.shape}"
        )
    out = Node(eps * sigma.value + mu.value, op="reparameterize",
               parents=(mu, sigma))

    def _bw(up):
        mu.grad += up
        sigma.grad += eps * up

    out._backward = _bw
    return out


def dropout(x, rate: float, mask=None, training: bool = False, rng=None) -> Node:
    """Inverted dropout: survivors scaled by 1/(1-rate); identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_node(x)
    if not training or rate == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ValueError("dropout in training mode needs a mask or an rng")
        mask = (rng.random(x.value.shape) >= rate).astype(np.float64)
    else:
        mask = tensor(mask, ctx="dropout mask")
    keep = mask / (1.0 - rate)
    out = Node(x.value * keep, op="dropout", parents=(x,))

    def _bw(up):
        x.grad += keep * up

    out._backward = _bw
    return out


def abs_row_cosine(a, b) -> tuple[Node, int]:
    """Per-row |cosine similarity| of two n x d nodes.

    Rows where either vector has zero norm contribute 0 and are counted in the
    returned tally instead of dividing by zero.
    """
    a, b = as_node(a), as_node(b)
    if a.value.shape != b.value.shape or a.value.ndim != 2:
        raise ShapeMismatch(
            f"abs_row_cosine expects equal n x d shapes, got {a.value.shape} "
            f"and {b.value.shape}"
        )
    na = np.linalg.norm(a.value, axis=1)
    nb = np.linalg.norm(b.value, axis=1)
    ok = (na > 0) & (nb > 0)
    denom = np.where(ok, na * nb, 1.0)
    dot = (a.value * b.value).sum(axis=1)
    cos = np.where(ok, dot / denom, 0.0)
    out = Node(np.abs(cos), op="abs_cosine", parents=(a, b))
    zero_rows = int((~ok).sum())

    def _bw(up):
        s = np.sign(cos) * up * ok
        sa = (s / denom)[:, None]
        ca = (s * cos / np.where(ok, na * na, 1.0))[:, None]
        cb = (s * cos / np.where(ok, nb * nb, 1.0))[:, None]
        a.grad += sa * b.value - ca * a.value
        b.grad += sa * a.value - cb * b.value

    out._backward = _bw
    return out, zero_rows


# ---------------------------------------------------------------------------
# backward pass


def backward(root: Node) -> None:
    """Reverse-mode sweep from a scalar root; accumulates into ``.grad``."""
    if root.value.size != 1:
        raise ValueError(f"backward expects a scalar root, got shape {root.value.shape}")
    order = _topological_order(root)
    root.grad += np.ones_like(root.value)
    for node in order:
        if node._backward is not None:
            node._backward(node.grad)


def _topological_order(root: Node) -> list[Node]:
    """Nodes reachable from root, root first (iterative, graphs can be deep)."""
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def zero_grads(params) -> None:
    for p in params:
        p.grad[...] = 0.0
