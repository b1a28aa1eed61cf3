"""Class-specific prompt generator.

The prior-guided feature is shared by all classes; category specificity comes
from one independent (dense, sparse) projection group per class, and a
forward pass for class ``c`` uses only group ``c``.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import CLASSES
from .encoder import _prior_values
from .errors import DimensionError, ValidationError
from .nn import Conv1x1, Linear, Module
from .tensor import Tensor


@dataclass
class PromptEmbeddings:
    dense: Tensor  # [H_e, W_e, C_e]
    sparse: Tensor  # [N_s, C_e]
    class_id: str


def prior_guide(fe, prior, resize=True):
    """Prior-guided feature: ``fe`` scaled per pixel by the prior."""
    if fe.ndim != 3:
        raise DimensionError(f"expected [H_e, W_e, C_e] features, got {fe.shape}")
    p = _prior_values(prior, fe.shape[0], fe.shape[1], resize).astype(fe.dtype, copy=False)
    return fe * Tensor(p[..., None])


class ClassGroup(Module):
    def __init__(self, width, cells, n_tokens, rng, dtype):
        self.dense = Conv1x1(width, width, rng, stride=1, dtype=dtype, std=0.5 / np.sqrt(width))
        self.sparse = Linear(cells, n_tokens, rng, dtype, std=1.0 / cells)


class PromptGenerator(Module):
    def __init__(self, width, grid, n_tokens, rng, dtype=np.float32):
        self._grid = grid
        self._width = width
        for cls in CLASSES:
            setattr(self, cls, ClassGroup(width, grid * grid, n_tokens, rng, dtype))

    def group(self, class_id):
        if class_id not in CLASSES:
            raise ValidationError(f"unknown class {class_id!r}; valid: {', '.join(CLASSES)}")
        return getattr(self, class_id)

    def __call__(self, fe, prior, class_id, use_prior=True, resize=True):
        group = self.group(class_id)
        fp = prior_guide(fe, prior, resize) if use_prior else fe
        h, w, c = fp.shape
        dense = group.dense(fp)
        # [C_e, H_e*W_e] -> sparse linear over the spatial axis -> [N_s, C_e]
        sparse = group.sparse(fp.reshape(h * w, c).T).T
        return PromptEmbeddings(dense, sparse, class_id)


def generate_prompts(gen, fe, prior, class_id, use_prior=True):
    return gen(fe, prior, class_id, use_prior)
