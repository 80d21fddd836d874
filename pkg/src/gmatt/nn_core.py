"""A small reverse-mode autodiff kernel over numpy arrays.

Only the operations the tree transformer needs are provided.  Every op
records its parents and a closure that maps the output gradient to parent
gradients; ``backward`` walks the graph once in reverse topological order.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import EmptyBatch, IndexOutOfRange, ShapeMismatch

MASK_FILL = -1e9

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by tensors is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological(root: Tensor) -> list[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad=None) -> list[Tensor]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    Returns the leaves that received gradients.
    """
    if grad is None:
        if loss.data.size != 1:
            raise ShapeMismatch("backward() without a seed gradient needs a scalar")
        grad = np.ones_like(loss.data)
    grads = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    leaves = []
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            leaves.append(node)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return leaves


# ---- elementwise / structural ops -------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a.dtype if isinstance(a, Tensor) else None)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(a.data * b.data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _make(a.data @ b.data, (a, b), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def masked_fill(a: Tensor, keep, fill: float = MASK_FILL) -> Tensor:
    """Replace entries where ``keep`` is False by ``fill``; no gradient flows there."""
    keep = np.asarray(keep, dtype=bool)
    data = np.where(keep, a.data, a.dtype.type(fill))
    return _make(data, (a,), lambda g: (_unbroadcast(np.where(keep, g, 0), a.shape),))


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)
    return _make(weight.data[ids], (weight,), bw)


def gather_nodes(x: Tensor, idx) -> Tensor:
    """``out[b, ...] = x[b, idx[b, ...]]`` for x of shape (B, N, D)."""
    idx = np.asarray(idx, dtype=np.int64)
    B, N = x.shape[:2]
    if idx.size and (idx.min() < 0 or idx.max() >= N):
        raise IndexOutOfRange(f"node index outside [0, {N})")
    flat = idx.reshape(B, -1)
    rows = np.arange(B)[:, None]

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, flat), g.reshape(B, flat.shape[1], -1))
        return (gx,)
    out = x.data[rows, flat].reshape(idx.shape + x.shape[2:])
    return _make(out, (x,), bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0 <= p < 1:
        raise ValueError("dropout probability must be in [0, 1)")
    if not training or p == 0:
        return x
    keep = rng.random(x.shape) >= p
    scale = (keep / (1.0 - p)).astype(x.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,))


# ---- normalisation and probability ops --------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return _make(s, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _make(out, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        return gx, gg, gb
    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw)


def cross_entropy(logits: Tensor, targets, pad_id: int | None = 0) -> Tensor:
    """Mean token negative log-likelihood over positions whose target is not ``pad_id``.

    ``logits`` has shape (..., V) and ``targets`` the leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    flat_logits = logits.data.reshape(-1, V)
    flat_t = targets.reshape(-1)
    valid = np.ones_like(flat_t, dtype=bool) if pad_id is None else flat_t != pad_id
    count = int(valid.sum())
    if count == 0:
        raise EmptyBatch("every target position is padding")
    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.nonzero(valid)[0]
    loss = -logp[rows, flat_t[rows]].sum() / count

    def bw(g):
        grad = np.exp(logp)
        grad[np.arange(len(flat_t)), np.where(valid, flat_t, 0)] -= 1.0
        grad *= valid[:, None] / count
        return ((grad * g).reshape(logits.shape).astype(logits.dtype),)
    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), bw)


def scaled_dot_attention(Q: Tensor, K: Tensor, V: Tensor, mask=None):
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes.

    ``mask`` is boolean, broadcastable to the score shape, True = attend.
    Returns ``(output, weights)``.
    """
    Q, K, V = as_tensor(Q), as_tensor(K), as_tensor(V)
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    d_k = Q.shape[-1]
    scores = matmul(Q, transpose(K, _swap_last(K.ndim))) * (1.0 / math.sqrt(d_k))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, scores.shape)
        except ValueError as exc:
            raise ShapeMismatch(f"mask {mask.shape} vs scores {scores.shape}") from exc
        scores = masked_fill(scores, mask)
    weights = softmax(scores, axis=-1)
    return matmul(weights, V), weights


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
