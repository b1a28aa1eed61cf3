"""Flat ``key = value`` configuration with typed defaults and ``--set`` overrides."""

import hashlib
from pathlib import Path

from .errors import ConfigError

CLASSES = ("MA", "HE", "EX", "SE")

DEFAULT_DESCRIPTIONS = {
    "MA": "small round dark red dots",
    "HE": "dark red blotches of blood",
    "EX": "yellowish-white deposits",
    "SE": "pale fluffy patches with soft edges",
}

DEFAULTS = {
    "seed": 0,
    "dtype": "float32",
    # model
    "model.input_size": 64,
    "model.patch": 4,
    "model.width": 64,
    "model.blocks": 4,
    "model.mlp_ratio": 2,
    # prior
    "prior.backend": "oracle-color",
    "prior.channels": 64,
    "prior.seed": 1234,
    "prior.text_buckets": 256,
    # injector
    "injector.enabled": True,
    "injector.every": 1,
    "injector.key_dim": 32,
    "injector.stride": 4,
    "injector.gamma_init": 1.0,
    "injector.query_source": "raw",
    "injector.use_prior": True,
    "injector.resize_prior": True,
    # class-specific prompt generator
    "cpg.use_prior": True,
    "cpg.sparse_tokens": 8,
    # decoder
    "decoder.rounds": 2,
    "decoder.frozen": False,
    "decoder.upsample": "learned",
    "decoder.head_dim": 16,
    # training
    "train.steps": 300,
    "train.epochs": 0,
    "train.batch_size": 16,
    "train.lr": 1e-4,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.weight_decay": 0.01,
    "train.seed": 0,
    "train.checkpoint_every": 0,
    "train.preset_epochs": 0,
    # evaluation
    "eval.threshold": 0.5,
    # synthetic data
    "synth.seed": 7,
    "synth.size": 64,
    "synth.n_train": 200,
    "synth.n_eval": 50,
    "synth.overlap": False,
    "synth.noise": 0.015,
    "synth.ma.min": 2,
    "synth.ma.max": 5,
    "synth.he.min": 1,
    "synth.he.max": 3,
    "synth.ex.min": 1,
    "synth.ex.max": 3,
    "synth.se.min": 1,
    "synth.se.max": 2,
    "synth.ex_margin": 0.2,
}
for _cls, _text in DEFAULT_DESCRIPTIONS.items():
    DEFAULTS[f"class.{_cls}.description"] = _text

PAPER_SCALE = {
    "model.input_size": 1024,
    "synth.size": 1024,
    "train.preset_epochs": 500,
}


def _parse(key, raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None
    return raw


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


class Config:
    """Mapping of dotted keys to typed values. Unknown keys are rejected."""

    def __init__(self, overrides=None):
        self._values = dict(DEFAULTS)
        for key, value in (overrides or {}).items():
            self[key] = value

    def __getitem__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    def __setitem__(self, key, value):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        default = DEFAULTS[key]
        if isinstance(value, str) and not isinstance(default, str):
            value = _parse(key, value, default)
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        self._values[key] = value

    def get(self, key, default=None):
        return self._values.get(key, default)

    def copy(self, **overrides):
        out = Config()
        out._values = dict(self._values)
        for key, value in overrides.items():
            out[key.replace("__", ".")] = value
        return out

    def updated(self, mapping):
        out = self.copy()
        for key, value in mapping.items():
            out[key] = value
        return out

    def apply(self, assignments):
        """Apply ``key=value`` strings (the CLI ``--set`` form)."""
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"expected key=value, got {item!r}")
            key, value = item.split("=", 1)
            self[key.strip()] = value
        return self

    def to_text(self):
        return "".join(f"{k} = {_format(self._values[k])}\n" for k in sorted(self._values))

    def checksum(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def descriptions(self):
        return {c: self[f"class.{c}.description"] for c in CLASSES}

    def validate(self):
        size = self["model.input_size"]
        patch = self["model.patch"]
        stride = self["injector.stride"]
        for key in ("model.input_size", "model.patch", "model.width", "train.batch_size", "injector.stride",
                    "injector.key_dim", "injector.every", "cpg.sparse_tokens", "decoder.head_dim"):
            if self[key] <= 0:
                raise ConfigError(f"{key} must be positive, got {self[key]}")
        if self["model.blocks"] < 0 or self["train.steps"] < 0 or self["train.epochs"] < 0:
            raise ConfigError("block, step and epoch counts must be non-negative")
        if self["train.lr"] < 0:
            raise ConfigError("train.lr must be non-negative")
        if size % patch:
            raise ConfigError(f"model.input_size {size} not divisible by model.patch {patch}")
        if self["injector.enabled"] and (size // patch) % stride:
            raise ConfigError(
                f"encoder resolution {size // patch} not divisible by injector stride {stride}")
        if self["injector.query_source"] not in ("raw", "activated"):
            raise ConfigError("injector.query_source must be 'raw' or 'activated'")
        if self["decoder.upsample"] not in ("learned", "nearest", "bilinear"):
            raise ConfigError("decoder.upsample must be learned, nearest or bilinear")
        if self["prior.backend"] not in ("oracle-color", "stub-vlm"):
            raise ConfigError("prior.backend must be oracle-color or stub-vlm")
        if self["dtype"] not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        for cls in CLASSES:
            if not self[f"class.{cls}.description"].strip():
                raise ConfigError(f"class.{cls}.description is empty")
        return self

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
        return cfg

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_text())


def load_descriptions(path):
    """Read a registry file of ``class.<ID>.description = ...`` lines."""
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        parts = key.strip().split(".")
        if len(parts) != 3 or parts[0] != "class" or parts[2] != "description":
            raise ConfigError(f"bad registry key {key.strip()!r}")
        if parts[1] not in CLASSES:
            raise ConfigError(f"unknown class {parts[1]!r}; valid: {', '.join(CLASSES)}")
        out[parts[1]] = value.strip()
    return out
