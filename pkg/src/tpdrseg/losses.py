"""Training objective: per-sample BCE plus soft-IoU loss, averaged over the batch."""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, ValidationError
from .tensor import Tensor

BCE_EPS = 1e-7
IOU_SMOOTH = 1.0


def _pair(p, g):
    p = p if isinstance(p, Tensor) else Tensor(np.asarray(p, np.float64))
    g = np.asarray(g.data if isinstance(g, Tensor) else g, dtype=p.dtype)
    if p.shape != g.shape:
        raise DimensionError(f"prediction {p.shape} and ground truth {g.shape} differ")
    return p, Tensor(g)


def bce_loss(p, g, eps=BCE_EPS):
    """Mean binary cross entropy of probabilities ``p`` against binary ``g``."""
    p, g = _pair(p, g)
    q = T.clamp(p, eps, 1.0 - eps)
    return -(g * T.log(q) + (1.0 - g) * T.log(1.0 - q)).mean()


def soft_iou_loss(p, g, smooth=IOU_SMOOTH):
    p, g = _pair(p, g)
    inter = (p * g).sum()
    union = p.sum() + g.sum() - inter
    return 1.0 - (inter + smooth) / (union + smooth)


@dataclass
class LossReport:
    bce: float
    iou: float
    total: Tensor  # differentiable scalar

    @property
    def value(self):
        return float(self.total.data)


def total_loss(preds, gts):
    """Batch mean of (IoU loss + BCE loss)."""
    preds, gts = list(preds), list(gts)
    if not preds or len(preds) != len(gts):
        raise ValidationError("total_loss needs equal-length, non-empty prediction and target lists")
    bces, ious = [], []
    total = None
    for p, g in zip(preds, gts):
        b = bce_loss(p, g)
        i = soft_iou_loss(p, g)
        bces.append(float(b.data))
        ious.append(float(i.data))
        term = b + i
        total = term if total is None else total + term
    n = len(preds)
    return LossReport(float(np.mean(bces)), float(np.mean(ious)), total * (1.0 / n))
