"""Parameter containers and the small layer set the model is assembled from."""

import hashlib
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameters are the Tensor attributes; sub-modules are walked recursively.

    Names follow attribute insertion order, giving dotted keys such as
    ``encoder.block0.attn.wq``.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict=True):
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, arr in state.items():
            if name not in own:
                continue
            p = own[name]
            if p.shape != arr.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def checksum(self):
        digest = hashlib.sha256()
        for name, p in self.named_parameters():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()


def param(arr, dtype, trainable=True):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=trainable)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float32, bias=True, std=None, zero=False):
        std = 1.0 / math.sqrt(n_in) if std is None else std
        w = np.zeros((n_in, n_out)) if zero else rng.standard_normal((n_in, n_out)) * std
        self.weight = param(w, dtype)
        if bias:
            self.bias = param(np.zeros(n_out), dtype)
        else:
            self.bias = None

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class Conv1x1(Linear):
    """Linear map over channels applied at every ``stride``-th pixel."""

    def __init__(self, n_in, n_out, rng, stride=1, **kw):
        super().__init__(n_in, n_out, rng, **kw)
        self.stride = stride

    def __call__(self, x):
        return T.conv1x1(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32):
        self.weight = param(np.ones(dim), dtype)
        self.bias = param(np.zeros(dim), dtype)

    def __call__(self, x):
        return T.layer_norm(x, self.weight, self.bias)


class Attention(Module):
    """Single-head scaled dot-product attention with input/output projections.

    The most recent attention matrix is kept in ``last_weights`` so tests can
    inspect row sums.
    """

    def __init__(self, dim_q, dim_kv, dim, dim_out, rng, dtype=np.float32, zero_out=False):
        self.wq = Linear(dim_q, dim, rng, dtype)
        self.wk = Linear(dim_kv, dim, rng, dtype)
        self.wv = Linear(dim_kv, dim, rng, dtype)
        self.wo = Linear(dim, dim_out, rng, dtype, zero=zero_out)
        self._scale = 1.0 / math.sqrt(dim)
        self._last_weights = None

    @property
    def last_weights(self):
        return self._last_weights

    def __call__(self, queries, context):
        q = self.wq(queries)
        k = self.wk(context)
        v = self.wv(context)
        weights = T.softmax(T.matmul(q, k.T) * self._scale)
        self._last_weights = weights.data
        return self.wo(T.matmul(weights, v))


def scaled_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v for 2-d token matrices; returns (output, weights)."""
    d = q.shape[-1]
    weights = T.softmax(T.matmul(q, k.T) * (1.0 / math.sqrt(d)))
    return T.matmul(weights, v), weights
