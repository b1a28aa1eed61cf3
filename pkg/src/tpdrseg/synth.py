"""Deterministic synthetic fundus-like images with four lesion classes.

Randomness comes only from :class:`SplitMix64` (Steele, Lea & Flood's
64-bit generator: Weyl increment 0x9E3779B97F4A7C15, mixing multipliers
0xBF58476D1CE4E5B9 and 0x94D049BB133111EB), so a (config, sample id) pair
produces the same bytes on every platform.

Lesion signatures:

* MA: 1-3 px dark-red dots
* HE: 5-15 px dark-red blobs
* EX: clusters of bright yellowish-white specks
* SE: pale yellow, soft-edged patches
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .config import CLASSES, Config
from .errors import GenerationError

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

BACKGROUND = np.array([0.62, 0.30, 0.13])
VESSEL = np.array([0.45, 0.13, 0.08])
COLORS = {
    "MA": np.array([0.36, 0.05, 0.04]),
    "HE": np.array([0.38, 0.06, 0.05]),
    "EX": np.array([0.98, 0.94, 0.62]),
    "SE": np.array([0.86, 0.80, 0.66]),
}


def _mix(z):
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + _GOLDEN) & MASK64
        return _mix(self.state)

    def uniform(self, lo=0.0, hi=1.0):
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0 ** -53)

    def randint(self, lo, hi):
        """Integer in [lo, hi] inclusive."""
        return lo + min(int(self.uniform() * (hi - lo + 1)), hi - lo)

    def uniform_array(self, n):
        """``n`` draws equal to ``n`` successive :meth:`uniform` calls."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & MASK64
        return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def sample_seed(seed, sample_id):
    return _mix((int(seed) * 0x100000001B3 + int(sample_id) + 1) & MASK64)


@dataclass
class SynthConfig:
    seed: int = 7
    size: int = 64
    noise: float = 0.015
    overlap: bool = False
    counts: dict = field(default_factory=lambda: {"MA": (2, 5), "HE": (1, 3), "EX": (1, 3), "SE": (1, 2)})

    @classmethod
    def from_config(cls, cfg: Config):
        counts = {c: (cfg[f"synth.{c.lower()}.min"], cfg[f"synth.{c.lower()}.max"]) for c in CLASSES}
        return cls(cfg["synth.seed"], cfg["synth.size"], cfg["synth.noise"], cfg["synth.overlap"], counts)


@dataclass
class SegmentationSample:
    image: np.ndarray  # [H, W, 3] float32 in [0, 1], multiples of 1/255
    masks: dict  # class id -> [H, W] uint8 in {0, 1}
    sample_id: str

    def present_classes(self):
        return [c for c in CLASSES if self.masks[c].any()]


def _disk(yy, xx, cy, cx, ry, rx=None):
    rx = ry if rx is None else rx
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


class _Canvas:
    def __init__(self, size, rng):
        self.size = size
        self.rng = rng
        self.yy, self.xx = np.mgrid[0:size, 0:size].astype(np.float64)
        c = (size - 1) / 2.0
        self.cy = c + rng.uniform(-0.02, 0.02) * size
        self.cx = c + rng.uniform(-0.02, 0.02) * size
        self.radius = 0.45 * size
        r2 = _disk(self.yy, self.xx, self.cy, self.cx, self.radius)
        self.disc = r2 <= 1.0
        shade = 1.0 - 0.25 * np.clip(r2, 0, 1)
        self.base = BACKGROUND[None, None, :] * shade[..., None]
        self.rgb = self.base.copy()
        self.occupied = np.zeros((size, size), bool)

    def paint(self, alpha, color):
        a = alpha[..., None]
        self.rgb = self.rgb * (1 - a) + color[None, None, :] * a

    def inside(self, cy, cx, reach):
        return math.hypot(cy - self.cy, cx - self.cx) + reach <= self.radius - 1.5

    def free(self, mask):
        grown = mask.copy()
        grown[1:] |= mask[:-1]
        grown[:-1] |= mask[1:]
        grown[:, 1:] |= grown[:, :-1].copy()
        grown[:, :-1] |= grown[:, 1:].copy()
        return not (grown & self.occupied).any()


def _vessels(canvas):
    rng = canvas.rng
    for _ in range(rng.randint(2, 3)):
        angle = rng.uniform(0, 2 * math.pi)
        dist = canvas.radius * rng.uniform(1.0, 1.4)
        vy = canvas.cy + dist * math.sin(angle)
        vx = canvas.cx + dist * math.cos(angle)
        arc_r = dist * rng.uniform(0.75, 0.95)
        width = rng.uniform(0.6, 1.1)
        d = np.hypot(canvas.yy - vy, canvas.xx - vx)
        alpha = np.clip(1.0 - np.abs(d - arc_r) / width, 0, 1) * canvas.disc
        canvas.paint(alpha, VESSEL)


def _place(canvas, make, overlap, tries=60):
    """Call ``make()`` -> (mask, alpha, reach, center) until a placement fits."""
    for _ in range(tries):
        mask, alpha, reach, (cy, cx) = make()
        if not canvas.inside(cy, cx, reach) or not mask.any():
            continue
        if not overlap and not canvas.free(mask):
            continue
        return mask, alpha
    return None


def _center(canvas):
    rng = canvas.rng
    r = canvas.radius * math.sqrt(rng.uniform(0, 1)) * 0.9
    t = rng.uniform(0, 2 * math.pi)
    return canvas.cy + r * math.sin(t), canvas.cx + r * math.cos(t)


def _ma(canvas):
    cy, cx = _center(canvas)
    r = canvas.rng.uniform(0.55, 1.5)
    mask = _disk(canvas.yy, canvas.xx, cy, cx, r) <= 1.0
    return mask, mask.astype(float), r, (cy, cx)


def _he(canvas):
    rng = canvas.rng
    cy, cx = _center(canvas)
    ry, rx = rng.uniform(2.5, 7.5), rng.uniform(2.5, 7.5)
    mask = _disk(canvas.yy, canvas.xx, cy, cx, ry, rx) <= 1.0
    return mask, mask.astype(float), max(ry, rx), (cy, cx)


def _ex(canvas):
    rng = canvas.rng
    cy, cx = _center(canvas)
    mask = np.zeros_like(canvas.disc)
    for _ in range(rng.randint(3, 6)):
        oy, ox = rng.uniform(-4, 4), rng.uniform(-4, 4)
        mask |= _disk(canvas.yy, canvas.xx, cy + oy, cx + ox, rng.uniform(0.8, 2.2)) <= 1.0
    return mask, mask.astype(float), 7.0, (cy, cx)


def _se(canvas):
    rng = canvas.rng
    cy, cx = _center(canvas)
    r = rng.uniform(3.5, 6.5)
    soft = 2.0
    d = np.sqrt(_disk(canvas.yy, canvas.xx, cy, cx, 1.0)) - r
    alpha = np.clip(0.5 - d / soft, 0, 1)
    return alpha >= 0.5, alpha, r + soft, (cy, cx)


_MAKERS = {"HE": _he, "SE": _se, "EX": _ex, "MA": _ma}


def generate_sample(cfg: SynthConfig, sample_id: int) -> SegmentationSample:
    if cfg.size < 24:
        raise GenerationError(f"image size {cfg.size} too small to place lesions")
    rng = SplitMix64(sample_seed(cfg.seed, sample_id))
    canvas = _Canvas(cfg.size, rng)
    _vessels(canvas)
    masks = {c: np.zeros((cfg.size, cfg.size), np.uint8) for c in CLASSES}
    for cls in ("HE", "SE", "EX", "MA"):
        lo, hi = cfg.counts[cls]
        for _ in range(rng.randint(lo, hi) if hi > 0 else 0):
            placed = _place(canvas, lambda: _MAKERS[cls](canvas), cfg.overlap)
            if placed is None:
                raise GenerationError(f"could not place a {cls} lesion in sample {sample_id}")
            mask, alpha = placed
            canvas.paint(alpha, COLORS[cls])
            for other in CLASSES:
                if other != cls:
                    masks[other][mask] = 0
            masks[cls][mask] = 1
            canvas.occupied |= mask
    noise = (rng.uniform_array(cfg.size * cfg.size * 3).reshape(cfg.size, cfg.size, 3) * 2 - 1) * cfg.noise
    rgb = np.where(canvas.disc[..., None], canvas.rgb + noise, 0.0)
    levels = np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    image = levels.astype(np.float32) / np.float32(255)
    return SegmentationSample(image, masks, f"{sample_id:05d}")


def generate_dataset(cfg: SynthConfig, start, count):
    return [generate_sample(cfg, i) for i in range(start, start + count)]


def split_ids(ids, eval_fraction, seed=0):
    """Deterministic train/eval split by hashing each id."""
    train, held = [], []
    for sid in ids:
        h = _mix((hash_text(str(sid)) ^ int(seed)) & MASK64)
        (held if (h >> 11) * 2.0 ** -53 < eval_fraction else train).append(sid)
    return train, held


def hash_text(text):
    """FNV-1a 64-bit; stable across processes unlike ``hash``."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h
