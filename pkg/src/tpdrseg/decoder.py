"""Lightweight prompt-conditioned mask decoder.

Image grid = encoder embedding + dense prompt; tokens = [mask token; sparse
prompts]. Each round lets the tokens attend to the image, refines them with
an MLP, then lets the image attend back to the tokens. The per-pixel logit is
the dot product of an upscaled pixel embedding with an MLP of the final mask
token.
"""

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Attention, LayerNorm, Linear, Module, param


class DecoderRound(Module):
    def __init__(self, width, rng, dtype):
        self.t2i = Attention(width, width, width, width, rng, dtype)
        self.ln1 = LayerNorm(width, dtype)
        self.mlp1 = Linear(width, 2 * width, rng, dtype)
        self.mlp2 = Linear(2 * width, width, rng, dtype)
        self.ln2 = LayerNorm(width, dtype)
        self.i2t = Attention(width, width, width, width, rng, dtype)
        self.ln3 = LayerNorm(width, dtype)

    def __call__(self, tokens, image):
        tokens = self.ln1(tokens + self.t2i(tokens, image))
        tokens = self.ln2(tokens + self.mlp2(T.gelu(self.mlp1(tokens))))
        image = self.ln3(image + self.i2t(image, tokens))
        return tokens, image


class MaskDecoder(Module):
    def __init__(self, width, grid, scale, rng, rounds=2, head_dim=16, upsample="learned", dtype=np.float32):
        self._width = width
        self._grid = grid
        self._scale = scale
        self._rounds = rounds
        self._mode = upsample
        self.mask_token = param(rng.standard_normal((1, width)), dtype)
        for i in range(rounds):
            setattr(self, f"round{i}", DecoderRound(width, rng, dtype))
        self.hyper1 = Linear(width, width, rng, dtype)
        self.hyper2 = Linear(width, head_dim, rng, dtype)
        if upsample == "learned":
            # transposed-conv-like head: one linear map to scale*scale sub-pixels
            self.up = Linear(width, scale * scale * head_dim, rng, dtype)
        else:
            self.up = Linear(width, head_dim, rng, dtype)
        self._head_dim = head_dim

    def rounds(self):
        return [getattr(self, f"round{i}") for i in range(self._rounds)]

    def __call__(self, fe, prompts=None):
        h, w, c = fe.shape
        if c != self._width or h != self._grid or w != self._grid:
            raise DimensionError(f"decoder expects [{self._grid}, {self._grid}, {self._width}], got {fe.shape}")
        grid = fe
        tokens = self.mask_token
        if prompts is not None:
            if prompts.dense.shape != fe.shape:
                raise DimensionError(f"dense prompt {prompts.dense.shape} does not match features {fe.shape}")
            if prompts.sparse.ndim != 2 or prompts.sparse.shape[1] != c:
                raise DimensionError(f"sparse prompt must be [N_s, {c}], got {prompts.sparse.shape}")
            grid = grid + prompts.dense
            tokens = T.concat([self.mask_token, prompts.sparse], axis=0)
        image = grid.reshape(h * w, c)
        for rnd in self.rounds():
            tokens, image = rnd(tokens, image)
        hyper = self.hyper2(T.gelu(self.hyper1(tokens[0:1])))  # [1, head_dim]
        s, k = self._scale, self._head_dim
        if self._mode == "learned":
            up = T.gelu(self.up(image)).reshape(h, w, s, s, k).permute(0, 2, 1, 3, 4).reshape(h * s * w * s, k)
            return T.matmul(up, hyper.T).reshape(h * s, w * s)
        low = T.matmul(self.up(image), hyper.T).reshape(h, w, 1)
        return T.upsample(low, s, self._mode).reshape(h * s, w * s)


def decode(dec, fe, prompts):
    """Full-resolution logits [H, W]."""
    return dec(fe, prompts)
