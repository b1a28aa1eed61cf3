"""Central finite-difference gradient checking."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class GradcheckResult:
    max_rel_error: float
    per_input: list = field(default_factory=list)

    def passed(self, tol=1e-4):
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| scaled by the larger of the two gradients' sup-norms.

    ``floor`` keeps the ratio meaningful when the true gradient is ~0 and only
    finite-difference round-off remains.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def finite_difference_gradcheck(fn, inputs, h=1e-6, max_entries=64, seed=0, wrt=None):
    """Compare reverse-mode gradients of ``fn(*inputs)`` with central differences.

    The (possibly non-scalar) output is reduced against a fixed random
    projection so every output element contributes. ``wrt`` selects which
    inputs to check (default: all that require grad). For inputs larger than
    ``max_entries`` a deterministic random subset of coordinates is probed.
    """
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    if wrt is None:
        wrt = [i for i, t in enumerate(inputs) if isinstance(t, Tensor) and t.requires_grad]

    out = fn(*inputs)
    weights = rng.standard_normal(out.shape) if out.ndim else np.array(1.0)
    weights = weights.astype(out.dtype)

    def scalar():
        return float((np.asarray(fn(*inputs).data, dtype=np.float64) * weights).sum())

    for t in inputs:
        if isinstance(t, Tensor):
            t.grad = None
    out.backward(weights)

    pairs = []
    for i in wrt:
        t = inputs[i]
        analytic = np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64)
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        if flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        else:
            coords = np.arange(flat.size)
        numeric = np.empty(len(coords))
        for j, k in enumerate(coords):
            orig = flat[k]
            flat[k] = orig + h
            plus = scalar()
            flat[k] = orig - h
            minus = scalar()
            flat[k] = orig
            numeric[j] = (plus - minus) / (2 * h)
        pairs.append((analytic.reshape(-1)[coords], numeric))
    # a tensor whose true gradient is ~0 (e.g. a key bias under softmax shift
    # invariance) is judged against 1e-3 of the largest gradient in the check,
    # not against its own round-off-sized numeric estimate
    overall = max((max(np.abs(a).max(initial=0), np.abs(n).max(initial=0)) for a, n in pairs), default=0.0)
    floor = max(1e-6, 1e-3 * overall)
    per_input = [relative_error(a, n, floor) for a, n in pairs]
    return GradcheckResult(max(per_input, default=0.0), per_input)
