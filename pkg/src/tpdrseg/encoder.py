"""Frozen ViT-style encoder interleaved with trainable prior-aligned injectors."""

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import Attention, Conv1x1, LayerNorm, Linear, Module, param
from .prior import PriorMap, resize_nearest
from .tensor import Tensor


class EncoderBlock(Module):
    """Pre-norm transformer block over the h*w tokens of an [h, w, c] map."""

    def __init__(self, width, mlp_ratio, rng, dtype=np.float32):
        self.ln1 = LayerNorm(width, dtype)
        self.attn = Attention(width, width, width, width, rng, dtype)
        self.ln2 = LayerNorm(width, dtype)
        self.fc1 = Linear(width, width * mlp_ratio, rng, dtype)
        self.fc2 = Linear(width * mlp_ratio, width, rng, dtype)

    def __call__(self, x):
        h, w, c = x.shape
        tokens = x.reshape(h * w, c)
        normed = self.ln1(tokens)
        tokens = tokens + self.attn(normed, normed)
        tokens = tokens + self.fc2(T.gelu(self.fc1(self.ln2(tokens))))
        return tokens.reshape(h, w, c)


def _prior_values(prior, height, width, resize=True):
    values = prior.values if isinstance(prior, PriorMap) else prior
    data = values.data if isinstance(values, Tensor) else np.asarray(values)
    if data.shape != (height, width):
        if not resize:
            raise DimensionError(f"prior {data.shape} does not match feature map {(height, width)}")
        data = resize_nearest(data, height, width)
    return data


def activate(f, prior, resize=True):
    """Explicitly activated feature: every channel of ``f`` scaled by the prior."""
    h, w = f.shape[0], f.shape[1]
    p = _prior_values(prior, h, w, resize).astype(f.dtype, copy=False)
    return f * Tensor(p[..., None])


class Injector(Module):
    """Blends prior-activated context into the feature stream.

    Queries come from the raw features (or the activated ones when
    ``query_source="activated"``); keys and values from the activated
    features. All three are zoomed down by a strided 1x1 projection, attended
    over the coarse token grid, projected back to the feature width
    (zero-initialised), upsampled and added to ``gamma * f``.
    """

    def __init__(self, width, key_dim, rng, stride=4, gamma_init=1.0, query_source="raw",
                 dtype=np.float32, upsample="nearest"):
        if query_source not in ("raw", "activated"):
            raise ConfigError(f"query_source must be 'raw' or 'activated', got {query_source!r}")
        self.gamma = param(np.array(gamma_init), dtype)
        self.proj_q = Conv1x1(width, key_dim, rng, stride=stride, dtype=dtype)
        self.proj_k = Conv1x1(width, key_dim, rng, stride=stride, dtype=dtype)
        self.proj_v = Conv1x1(width, key_dim, rng, stride=stride, dtype=dtype)
        self.proj_out = Conv1x1(key_dim, width, rng, stride=1, dtype=dtype, zero=True)
        self._stride = stride
        self._key_dim = key_dim
        self._query_source = query_source
        self._upsample = upsample
        self._last_weights = None

    @property
    def last_weights(self):
        return self._last_weights

    def __call__(self, f, prior, resize=True):
        h, w, _ = f.shape
        s = self._stride
        if h % s or w % s:
            raise ConfigError(f"feature map {h}x{w} not divisible by injector stride {s}")
        act = activate(f, prior, resize)
        q = self.proj_q(act if self._query_source == "activated" else f)
        k = self.proj_k(act)
        v = self.proj_v(act)
        hq, wq = q.shape[0], q.shape[1]
        d = self._key_dim
        q, k, v = q.reshape(hq * wq, d), k.reshape(hq * wq, d), v.reshape(hq * wq, d)
        weights = T.softmax(T.matmul(q, k.T) * (1.0 / np.sqrt(d)).astype(f.dtype))
        self._last_weights = weights.data
        attended = T.matmul(weights, v).reshape(hq, wq, d)
        back = T.upsample(self.proj_out(attended), s, self._upsample)
        return self.gamma * f + back


def injector_forward(inj, f, prior, resize=True):
    return inj(f, prior, resize)


class Encoder(Module):
    """Patchify stem + positional embedding + frozen blocks + layer-norm neck.

    Every parameter is frozen; injectors live outside and are passed to
    :func:`encoder_forward`.
    """

    def __init__(self, input_size, patch, width, blocks, mlp_ratio, rng, dtype=np.float32):
        if input_size % patch:
            raise ConfigError(f"input size {input_size} not divisible by patch {patch}")
        self._patch = patch
        self._grid = input_size // patch
        self.stem = Linear(patch * patch * 3, width, rng, dtype)
        self.pos = param(rng.standard_normal((self._grid, self._grid, width)) * 0.5, dtype)
        for i in range(blocks):
            setattr(self, f"block{i}", EncoderBlock(width, mlp_ratio, rng, dtype))
        self.neck = LayerNorm(width, dtype)
        self._blocks = blocks
        self.freeze()

    @property
    def grid(self):
        return self._grid

    def blocks(self):
        return [getattr(self, f"block{i}") for i in range(self._blocks)]

    def embed(self, image):
        x = image.data if isinstance(image, Tensor) else np.asarray(image)
        h, w, c = x.shape
        p = self._patch
        if c != 3 or h != w or h // p != self._grid or h % p:
            raise DimensionError(f"expected a {self._grid * p}x{self._grid * p}x3 image, got {x.shape}")
        patches = x.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4).reshape(h // p, w // p, p * p * 3)
        return self.stem(Tensor(patches.astype(self.stem.weight.dtype, copy=False))) + self.pos


class EncoderFeatures:
    def __init__(self, stages, final):
        self.stages = stages  # per-block outputs F_i, each [H_s, W_s, C]
        self.final = final  # F_e, [H_e, W_e, C_e]


def encoder_forward(encoder, injectors, image, prior, resize=True):
    """Run the stack: ``F_{i+1} = Block_{i+1}(Injector_i(F_i, P_e))``.

    ``injectors`` maps block index -> Injector; blocks without an entry see
    the feature map unchanged.
    """
    x = encoder.embed(image)
    stages = []
    for i, block in enumerate(encoder.blocks()):
        inj = injectors.get(i)
        if inj is not None:
            x = inj(x, prior, resize)
        x = block(x)
        stages.append(x)
    return EncoderFeatures(stages, encoder.neck(x))
