"""Explicit prior: cosine similarity between per-cell image features and a
lesion description, min-max normalized to [0, 1].

Two frozen backends share one interface:

``StubVLM``
    A small random, seeded stand-in for a CLIP-like model: two strided patch
    mixers plus layer norm for images, hashed character trigrams plus a linear
    map for text.
``OracleColor``
    Keyword rules turn the description into weights over HSV colour bands, and
    images are described per cell by their band memberships. On the synthetic
    data this gives priors with real meaning.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import CLASSES, DEFAULT_DESCRIPTIONS
from .errors import DimensionError, ValidationError
from .nn import Linear, Module
from .synth import hash_text
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class ClassPrompt:
    class_id: str
    description: str

    def __post_init__(self):
        if self.class_id not in CLASSES:
            raise ValidationError(f"unknown class {self.class_id!r}; valid: {', '.join(CLASSES)}")
        if not self.description or not self.description.strip():
            raise ValidationError(f"empty description for class {self.class_id}")

    @classmethod
    def default(cls, class_id, registry=None):
        registry = registry or DEFAULT_DESCRIPTIONS
        if class_id not in CLASSES:
            raise ValidationError(f"unknown class {class_id!r}; valid: {', '.join(CLASSES)}")
        return cls(class_id, registry[class_id])


@dataclass
class PriorMap:
    values: Tensor  # [H_s, W_s] in [0, 1]
    source_class: str


def _as_image(image):
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    if data.ndim != 3 or data.shape[-1] != 3:
        raise DimensionError(f"expected an [H, W, 3] image, got shape {data.shape}")
    return data


def _patches(x, k):
    """[H, W, C] -> [H/k, W/k, k*k*C] non-overlapping patches."""
    h, w, c = x.shape
    if h % k or w % k:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {k}")
    return x.reshape(h // k, k, w // k, k, c).transpose(0, 2, 1, 3, 4).reshape(h // k, w // k, k * k * c)


class StubVLM(Module):
    kind = "stub-vlm"

    def __init__(self, channels=64, stride=4, buckets=256, seed=1234, dtype=np.float32):
        if stride % 2:
            raise DimensionError("stub backend needs an even total stride")
        rng = np.random.default_rng(seed)
        self._stride = stride
        self._buckets = buckets
        self.mix1 = Linear(2 * 2 * 3, channels, rng, dtype)
        self.mix2 = Linear((stride // 2) ** 2 * channels, channels, rng, dtype)
        self.text = Linear(buckets, channels, rng, dtype)
        self.freeze()

    def encode_image(self, image):
        x = _as_image(image).astype(self.mix1.weight.dtype, copy=False)
        with no_grad():
            h = T.gelu(self.mix1(Tensor(_patches(x, 2))))
            h = self.mix2(Tensor(_patches(h.data, self._stride // 2)))
            return T.layer_norm(h)

    def encode_text(self, prompt):
        counts = np.zeros(self._buckets)
        text = f"  {prompt.description.lower()} "
        for i in range(len(text) - 2):
            counts[hash_text(text[i : i + 3]) % self._buckets] += 1.0
        counts /= max(np.linalg.norm(counts), 1e-12)
        with no_grad():
            return self.text(Tensor(counts[None, :].astype(self.text.weight.dtype)))


# hue (deg), saturation, value centres and widths of each colour band
_BANDS = {
    "ywhite": ((53.0, 0.37, 0.97), (12.0, 0.10, 0.06)),
    "pale": ((42.0, 0.23, 0.86), (12.0, 0.08, 0.06)),
    "darkred": ((2.0, 0.88, 0.37), (8.0, 0.10, 0.07)),
    "tissue": ((21.0, 0.79, 0.55), (10.0, 0.10, 0.15)),
}
ORACLE_CHANNELS = ("ywhite", "pale", "darkred", "spot", "tissue", "bias")
_BIAS = 0.1

# matched longest first; a matched phrase is removed before shorter ones are tried
KEYWORDS = {
    "yellowish-white": {"ywhite": 1.0},
    "yellow-white": {"ywhite": 1.0},
    "dark red": {"darkred": 1.0},
    "deposit": {"ywhite": 0.3},
    "exudate": {"ywhite": 0.3},
    "cotton": {"pale": 1.0},
    "fluffy": {"pale": 0.5},
    "pale": {"pale": 1.0},
    "soft": {"pale": 0.3},
    "blot": {"darkred": 0.5},
    "dot": {"spot": 1.0},
    "red": {"darkred": 0.5},
}


def rgb_to_hsv(rgb):
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1), 0.0)
    safe = np.where(c > 0, c, 1)
    h = np.where(v == r, ((g - b) / safe) % 6, np.where(v == g, (b - r) / safe + 2, (r - g) / safe + 4))
    return np.where(c > 0, h * 60.0, 0.0), s, v


def band_memberships(rgb):
    """Per-pixel Gaussian membership in each colour band, [H, W, n_bands]."""
    h, s, v = rgb_to_hsv(np.asarray(rgb, np.float64))
    out = []
    for (hc, sc, vc), (hw, sw, vw) in _BANDS.values():
        dh = (h - hc + 180.0) % 360.0 - 180.0
        out.append(np.exp(-0.5 * ((dh / hw) ** 2 + ((s - sc) / sw) ** 2 + ((v - vc) / vw) ** 2)))
    return np.stack(out, axis=-1)


class OracleColor(Module):
    kind = "oracle-color"

    def __init__(self, stride=4, dtype=np.float32):
        self._stride = stride
        self._dtype = dtype

    def encode_image(self, image):
        x = _as_image(image)
        k = self._stride
        hgt, wid = x.shape[0] // k, x.shape[1] // k
        if x.shape[0] % k or x.shape[1] % k:
            raise DimensionError(f"image {x.shape[:2]} not divisible by prior stride {k}")
        m = band_memberships(x).reshape(hgt, k, wid, k, -1)
        mean = m.mean(axis=(1, 3))
        red = m[..., list(_BANDS).index("darkred")]
        spot = red.max(axis=(1, 3)) - red.mean(axis=(1, 3))
        bias = np.full((hgt, wid), _BIAS)
        feats = np.stack([mean[..., 0], mean[..., 1], mean[..., 2], spot, mean[..., 3], bias], axis=-1)
        return Tensor(feats.astype(self._dtype))

    def encode_text(self, prompt):
        text = prompt.description.lower()
        vec = dict.fromkeys(ORACLE_CHANNELS, 0.0)
        for phrase in sorted(KEYWORDS, key=len, reverse=True):
            if phrase in text:
                for channel, weight in KEYWORDS[phrase].items():
                    vec[channel] += weight
                text = text.replace(phrase, " ")
        return Tensor(np.array([[vec[c] for c in ORACLE_CHANNELS]], dtype=self._dtype))


def make_backend(cfg):
    dtype = np.dtype(cfg["dtype"])
    if cfg["prior.backend"] == "stub-vlm":
        return StubVLM(cfg["prior.channels"], cfg["model.patch"], cfg["prior.text_buckets"], cfg["prior.seed"], dtype)
    return OracleColor(cfg["model.patch"], dtype)


def encode_image(backend, image):
    """Visual prior [H_s, W_s, C_t]."""
    return backend.encode_image(image)


def encode_text(backend, prompt):
    """Text prior [1, C_t]."""
    if not isinstance(prompt, ClassPrompt):
        raise ValidationError("encode_text expects a ClassPrompt")
    return backend.encode_text(prompt)


def similarity_map(visual, text):
    """Cosine similarity of every visual-prior row with the text prior: [H_s*W_s, 1]."""
    pv = visual if isinstance(visual, Tensor) else Tensor(visual)
    pt = text if isinstance(text, Tensor) else Tensor(text)
    if pv.shape[-1] != pt.shape[-1]:
        raise DimensionError(f"channel mismatch: visual {pv.shape} vs text {pt.shape}")
    rows = pv.reshape(-1, pv.shape[-1])
    with no_grad():
        return T.matmul(T.l2_normalize(rows, axis=-1), T.l2_normalize(pt, axis=-1).T)


def min_max(values):
    """(x - min) / (max - min); a constant map becomes all zeros."""
    x = np.asarray(values)
    lo, hi = x.min(), x.max()
    if not hi > lo:
        return np.zeros_like(x)
    out = (x - lo) / (hi - lo)
    # pin the extremes exactly despite rounding in the division
    out[x == lo] = 0
    out[x == hi] = 1
    return np.clip(out, 0, 1)


def prior_from_similarity(sim, height, width, class_id):
    return PriorMap(Tensor(min_max(sim.data.reshape(height, width))), class_id)


def explicit_prior(backend, image, prompt):
    pv = encode_image(backend, image)
    pt = encode_text(backend, prompt)
    h, w = pv.shape[0], pv.shape[1]
    return prior_from_similarity(similarity_map(pv, pt), h, w, prompt.class_id)


def ones_prior(height, width, class_id, dtype=np.float32):
    return PriorMap(Tensor(np.ones((height, width), dtype=dtype)), class_id)


def resize_nearest(prior_values, height, width):
    """Nearest-neighbour resize of a [h, w] array."""
    src = np.asarray(prior_values)
    if src.shape == (height, width):
        return src
    ys = np.minimum((np.arange(height) + 0.5) * src.shape[0] / height, src.shape[0] - 1).astype(int)
    xs = np.minimum((np.arange(width) + 0.5) * src.shape[1] / width, src.shape[1] - 1).astype(int)
    return src[np.ix_(ys, xs)]

