"""Dense tensors with a reverse-mode gradient tape, backed by numpy.

Every op records its parents and a closure mapping the output gradient to
one gradient per parent. ``backward`` walks the recorded graph in reverse
topological order. Only leaves (tensors created with ``requires_grad=True``)
keep a ``grad`` buffer; repeated ``backward`` calls accumulate into it until
``zero_grad`` is called, which is why the training loop resets every step.

Arrays are float32 unless created from float64 data, which is how the
gradient checks run the same code path in 64-bit.
"""

import math
import os

import numpy as np

from .errors import ContractError, NumericError, ShapeError

DEBUG = bool(os.environ.get("HCFM_DEBUG"))

# tanh-approximation constant for GELU: sqrt(2 / pi)
GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operators --------------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    if DEBUG and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output from {op}")
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise binary ops ---------------------------------------------------

def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "div")


def matmul(a, b):
    """Matrix product with numpy semantics for leading (batch) dimensions."""
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# -- elementwise unary ops ----------------------------------------------------

def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(x):
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(x):
    s = _sigmoid(x.data)

    def bw(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return _make(x.data * s, (x,), bw, "silu")


def gelu(x):
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    v = x.data
    th = np.tanh(GELU_C * (v + GELU_K * v ** 3))

    def bw(g):
        d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * v * v)
        return (g * d,)

    return _make(0.5 * v * (1.0 + th), (x,), bw, "gelu")


# -- reductions and shape ops -------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(out), (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axis(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    return tsum(x, axes, keepdims) * (1.0 / count)


def reshape(x, shape):
    in_shape = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(in_shape),), "reshape")


def transpose(x, axes):
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def _has_array_index(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in idx)


def getitem(x, idx):
    advanced = _has_array_index(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if advanced:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return _make(np.ascontiguousarray(x.data[idx]), (x,), bw, "getitem")


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw, "concat")


# -- normalisation and attention helpers ---------------------------------------

def softmax(x, axis=-1, mask=None):
    """Softmax along ``axis`` with max subtraction.

    ``mask`` is a boolean array broadcastable to ``x``; False entries are
    treated as -inf logits. Every slice must keep at least one entry.
    """
    v = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, v.shape)
        if not np.all(mask.any(axis=axis)):
            raise ContractError("softmax: a slice is fully masked")
        v = np.where(mask, v, -np.inf)
    m = v.max(axis=axis, keepdims=True)
    e = np.exp(v - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis=-1):
    v = x.data
    m = v.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(v - m).sum(axis=axis, keepdims=True)) + m
    out = v - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalise over the last axis, then apply the optional affine."""
    d = x.shape[-1]
    for p in (gamma, beta):
        if p is not None and p.shape != (d,):
            raise ShapeError(f"layer_norm: parameter shape {p.shape} vs input {x.shape}")
    v = x.data
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = tuple(p for p in (x, gamma, beta) if p is not None)

    def bw(g):
        gxhat = g * gamma.data if gamma is not None else g
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _make(out, parents, bw, "layer_norm")


def conv1d(x, weight, bias=None):
    """1-D convolution over the second-to-last axis, stride 1, 'same' padding.

    x: [..., T, C_in]; weight: [C_out, C_in, K]; bias: [C_out].
    """
    c_out, c_in, k = weight.shape
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv1d: input {x.shape} vs weight {weight.shape}")
    t = x.shape[-2]
    left = (k - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[-2] = (left, k - 1 - left)
    xp = np.pad(x.data, pad)
    # [..., T, C_in, K] -> [..., T, C_in*K]
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-2).reshape(*x.shape[:-2], t, c_in * k)
    w2 = weight.data.reshape(c_out, c_in * k)
    out = cols @ w2.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, c_out)
        gw = (g2.T @ cols.reshape(-1, c_in * k)).reshape(c_out, c_in, k)
        gcols = (g @ w2).reshape(*x.shape[:-2], t, c_in, k)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j:j + t, :] += gcols[..., j]
        gx = gxp[..., left:left + t, :]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, bw, "conv1d")


def embedding(table, ids):
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding: id out of range for vocabulary of {table.shape[0]}")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(table.data[ids], (table,), bw, "embedding")


def dropout(x, p, rng=None, training=False):
    """Inverted dropout; in eval mode (or p == 0) returns ``x`` itself."""
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return mul(x, Tensor(keep))


def sinusoidal_encoding(positions, dim, max_period=10000.0):
    """Fixed sin/cos features of (possibly fractional) positions; no gradient."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = positions[..., None] * freqs
    enc = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if dim % 2:
        enc = np.concatenate([enc, np.zeros(enc.shape[:-1] + (1,))], axis=-1)
    return enc


# -- gradient tape -------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor requiring grad")
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.data.dtype).reshape(node.shape)
            else:
                node.grad += g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            if key in pending:
                pending[key] = pending[key] + gp
            else:
                pending[key] = gp
