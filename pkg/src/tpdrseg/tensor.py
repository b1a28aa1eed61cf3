"""Minimal reverse-mode automatic differentiation on top of numpy.

Every operation that produces a tensor requiring gradients is recorded with a
monotonically increasing id. ``Tensor.backward`` replays the recorded
operations reachable from the output in exact reverse recording order, which
is a valid reverse topological order because inputs always exist before the
operations that consume them.

Spatial tensors are channels-last (``[h, w, c]``) and row-major.
"""

import contextlib
import itertools
import math

import numpy as np

from .errors import DimensionError, NumericError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (inference, optimizer updates)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled():
    return _grad_enabled


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional float array that can take part in gradient recording."""

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.dtype not in _FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = None
        self._id = next(_ids)

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

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- backward ---------------------------------------------------------
    def backward(self, grad=None, trace=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring it.

        ``trace``, if a list, receives the ids of visited operations in the
        order they are processed.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in nodes:
                continue
            nodes[node._id] = node
            stack.extend(p for p in node._parents if p.requires_grad)

        grads = {self._id: grad}
        for node_id in sorted(nodes, reverse=True):
            node = nodes[node_id]
            g = grads.pop(node_id, None)
            if g is None:
                continue
            if node._backward is None:
                g = g.astype(node.dtype, copy=True)
                node.grad = g if node.grad is None else node.grad + g
                continue
            if trace is not None:
                trace.append(node_id)
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg

    # -- operators ----------------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def min(self, axis=None, keepdims=False):
        return reduce_min(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        return transpose_last(self)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _result(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


# -- elementwise ------------------------------------------------------------
def add(a, b):
    a, b = _pair(a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = _pair(a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _result(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)), "div")


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    exponent = float(exponent)
    ad = a.data
    return _result(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def exp(a):
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a):
    y = np.sqrt(a.data)
    return _result(y, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def sigmoid(a):
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a):
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _result(y, (a,), backward, "gelu")


def clamp(a, lo, hi):
    x = a.data
    mask = (x >= lo) & (x <= hi)
    return _result(np.clip(x, lo, hi), (a,), lambda g: (g * mask,), "clamp")


# -- shape ------------------------------------------------------------------
def reshape(a, shape):
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def permute(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "permute")


def transpose_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


def getitem(a, index):
    src_shape, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(src_shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _result(a.data[index], (a,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- reductions -------------------------------------------------------------
def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims=False):
    shape = a.shape
    y = a.data.sum(axis=axis, keepdims=keepdims)
    return _result(y, (a,), lambda g: (_expand(g, shape, axis, keepdims).copy(),), "sum")


def reduce_mean(a, axis=None, keepdims=False):
    shape = a.shape
    y = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(np.size(y), 1)
    return _result(y, (a,), lambda g: (_expand(g, shape, axis, keepdims) / count,), "mean")


def _reduce_extreme(a, axis, keepdims, fn, op):
    x = a.data
    y = fn(x, axis=axis, keepdims=keepdims)
    y_full = fn(x, axis=axis, keepdims=True)

    def backward(g):
        mask = (x == y_full).astype(x.dtype)
        mask /= mask.sum(axis=axis, keepdims=True)
        return (_expand(g, x.shape, axis, keepdims) * mask,)

    return _result(y, (a,), backward, op)


def reduce_max(a, axis=None, keepdims=False):
    return _reduce_extreme(a, axis, keepdims, np.max, "max")


def reduce_min(a, axis=None, keepdims=False):
    return _reduce_extreme(a, axis, keepdims, np.min, "min")


# -- linear algebra ---------------------------------------------------------
def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    try:
        y = np.matmul(ad, bd)
    except ValueError as exc:
        raise DimensionError(f"matmul batch dimensions not broadcastable: {a.shape} @ {b.shape}") from exc

    def backward(g):
        return (np.matmul(g, np.swapaxes(bd, -1, -2)), np.matmul(np.swapaxes(ad, -1, -2), g))

    return _result(y, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with ``weight`` of shape (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear expects last dim {weight.shape[0]}, got input {x.shape}")
    y = matmul(x, weight) if x.ndim >= 2 else reshape(matmul(reshape(x, (1, -1)), weight), (-1,))
    return y if bias is None else add(y, bias)


def softmax(x, axis=-1):
    """Softmax along ``axis`` (the last one by default), max-subtracted."""
    xd = x.data
    if xd.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    if np.isnan(xd).any():
        raise NumericError("softmax input contains NaN")
    e = np.exp(xd - xd.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward, "softmax")


def l2_normalize(x, axis=-1, eps=1e-12):
    """Unit-norm slices along ``axis``; slices with norm below ``eps`` become zero."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    live = norm >= eps
    safe = np.where(live, norm, 1.0)
    y = np.where(live, xd / safe, 0.0).astype(xd.dtype)

    def backward(g):
        gx = (g - y * (g * y).sum(axis=axis, keepdims=True)) / safe
        return (np.where(live, gx, 0.0),)

    return _result(y, (x,), backward, "l2_normalize")


def layer_norm(x, weight=None, bias=None, eps=1e-5):
    xd = x.data
    n = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    wd = weight.data if weight is not None else None
    y = xhat if wd is None else xhat * wd
    if bias is not None:
        y = y + bias.data
    parents = [x] + [t for t in (weight, bias) if t is not None]
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        dxhat = g if wd is None else g * wd
        dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        out = [dx]
        if weight is not None:
            out.append((g * xhat).sum(axis=lead))
        if bias is not None:
            out.append(g.sum(axis=lead))
        return tuple(out)

    return _result(y, parents, backward, "layer_norm")


# -- spatial ----------------------------------------------------------------
def conv1x1(x, weight, bias=None, stride=1):
    """1x1 convolution on ``[..., h, w, c_in]`` sampled every ``stride`` pixels from (0, 0).

    ``weight`` has shape (c_in, c_out).
    """
    stride = int(stride)
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if x.ndim < 3:
        raise DimensionError(f"conv1x1 expects [h, w, c] input, got {x.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"conv1x1 channel mismatch: input {x.shape}, weight {weight.shape}")
    xd, wd = x.data, weight.data
    xs = xd[..., ::stride, ::stride, :]
    y = xs @ wd
    if bias is not None:
        y = y + bias.data
    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        gx = np.zeros_like(xd)
        gx[..., ::stride, ::stride, :] = g @ wd.T
        gw = xs.reshape(-1, xs.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        out = [gx, gw]
        if bias is not None:
            out.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return tuple(out)

    return _result(y, parents, backward, "conv1x1")


def upsample_nearest(x, factor):
    """Replicate each pixel of ``[..., h, w, c]`` into a factor x factor block."""
    f = int(factor)
    if f < 1:
        raise DimensionError(f"upsample factor must be >= 1, got {factor}")
    if f == 1:
        return x
    h, w, c = x.shape[-3:]
    lead = x.shape[:-3]
    y = np.repeat(np.repeat(x.data, f, axis=-3), f, axis=-2)

    def backward(g):
        return (g.reshape(lead + (h, f, w, f, c)).sum(axis=(-4, -2)),)

    return _result(y, (x,), backward, "upsample_nearest")


def _bilinear_matrix(n, f, dtype):
    out = np.zeros((n * f, n), dtype=dtype)
    for i in range(n * f):
        src = (i + 0.5) / f - 0.5
        src = min(max(src, 0.0), n - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n - 1)
        frac = src - lo
        out[i, lo] += 1.0 - frac
        out[i, hi] += frac
    return out


def upsample_bilinear(x, factor):
    """Bilinear (half-pixel centers, edge clamped) upsampling of ``[h, w, c]``."""
    f = int(factor)
    if f < 1:
        raise DimensionError(f"upsample factor must be >= 1, got {factor}")
    h, w = x.shape[-3], x.shape[-2]
    ry = _bilinear_matrix(h, f, x.dtype)
    rx = _bilinear_matrix(w, f, x.dtype)
    y = np.einsum("Hh,...hwc,Ww->...HWc", ry, x.data, rx)

    def backward(g):
        return (np.einsum("Hh,...HWc,Ww->...hwc", ry, g, rx),)

    return _result(y, (x,), backward, "upsample_bilinear")


def upsample(x, factor, mode="nearest"):
    if mode == "nearest":
        return upsample_nearest(x, factor)
    if mode == "bilinear":
        return upsample_bilinear(x, factor)
    raise ValueError(f"unknown upsample mode {mode!r}")
