"""Training loop, evaluation, prediction export and the ablation runner."""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .config import CLASSES, Config
from .dataset import encode_pgm, encode_ppm
from .errors import FormatError, ValidationError
from .losses import total_loss
from .metrics import MetricAccumulator
from .model import FROZEN_GROUPS, TRAINABLE_GROUPS, TPDRSeg, predict_mask
from .optim import AdamW
from .synth import SplitMix64
from .tensor import no_grad

log = logging.getLogger(__name__)

# Table-3 style variants; "no_ep" replaces the prior by ones at both sites,
# "no_injector" drops the injectors but keeps the prior in the prompt generator.
ABLATIONS = {
    "full": {},
    "no_ep_injector": {"injector.use_prior": False},
    "no_ep_cpg": {"cpg.use_prior": False},
    "no_ep": {"injector.use_prior": False, "cpg.use_prior": False},
    "no_injector": {"injector.enabled": False},
    "no_injector_no_ep": {"injector.enabled": False, "cpg.use_prior": False},
}


@dataclass
class RunRecord:
    losses: list
    config_checksum: str
    wall_clock: float
    checkpoint: str = None
    metrics: object = None
    audit: dict = field(default_factory=dict)  # group -> (checksum before, checksum after)

    def frozen_unchanged(self):
        return all(self.audit[g][0] == self.audit[g][1] for g in FROZEN_GROUPS)

    def trainable_changed(self):
        return {g: self.audit[g][0] != self.audit[g][1] for g in TRAINABLE_GROUPS}

    def audit_lines(self):
        lines = []
        for group, (before, after) in self.audit.items():
            kind = "frozen" if group in FROZEN_GROUPS else "trainable"
            state = "unchanged" if before == after else "changed"
            lines.append(f"{group:<10} {kind:<9} {before[:12]} -> {after[:12]} {state}")
        return lines


class PriorCache:
    """Explicit priors per (sample id, class); valid because the backend is frozen."""

    def __init__(self, model):
        self._model = model
        self._cache = {}

    def get(self, sample, class_id):
        key = (sample.sample_id, class_id)
        if key not in self._cache:
            self._cache[key] = self._model.explicit_prior(sample.image, class_id)
        return self._cache[key]


def total_steps(cfg, n_samples):
    if cfg["train.steps"] > 0 or cfg["train.epochs"] == 0:
        return cfg["train.steps"]
    return cfg["train.epochs"] * math.ceil(n_samples / cfg["train.batch_size"])


def _batches(rng, n, batch_size):
    """Endless stream of index batches, reshuffled (Fisher-Yates) every pass."""
    while True:
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = rng.randint(0, i)
            order[i], order[j] = order[j], order[i]
        for start in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[start : start + batch_size]


def choose_class(rng, sample):
    present = sample.present_classes() or list(CLASSES)
    return present[rng.randint(0, len(present) - 1)]


def save_model(model, path):
    ckpt.save(path, model.state_dict())


def load_model(path, cfg):
    model = TPDRSeg(cfg)
    state = ckpt.load(path)
    own = dict(model.named_parameters())
    for name, arr in state.items():
        if name not in own:
            raise FormatError("checkpoint has a tensor the model does not know", record=name)
        if own[name].shape != arr.shape:
            raise FormatError(f"shape {arr.shape} does not match model {own[name].shape}", record=name)
    missing = [n for n in own if n not in state]
    if missing:
        raise FormatError("checkpoint is missing a tensor", record=missing[0])
    model.load_state_dict(state)
    return model


def train(cfg, samples, run_dir=None, on_step=None):
    """Train a fresh model; returns (model, RunRecord)."""
    cfg.validate()
    samples = list(samples)
    if not samples:
        raise ValidationError("training set is empty")
    started = time.perf_counter()
    model = TPDRSeg(cfg)
    before = model.group_checksums()
    run_dir = Path(run_dir) if run_dir else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(run_dir / "config.txt")

    opt = AdamW(model.trainable_parameters(), cfg["train.lr"], (cfg["train.beta1"], cfg["train.beta2"]),
                cfg["train.eps"], cfg["train.weight_decay"])
    rng = SplitMix64(cfg["train.seed"])
    priors = PriorCache(model)
    n_steps = total_steps(cfg, len(samples))
    batches = _batches(rng, len(samples), min(cfg["train.batch_size"], len(samples)))
    losses = []
    every = cfg["train.checkpoint_every"]
    for step in range(1, n_steps + 1):
        preds, gts = [], []
        for idx in next(batches):
            sample = samples[idx]
            cls = choose_class(rng, sample)
            logits = model(sample.image, cls, priors.get(sample, cls))
            preds.append(T.sigmoid(logits))
            gts.append(sample.masks[cls])
        report = total_loss(preds, gts)
        opt.zero_grad()
        report.total.backward()
        opt.step()
        losses.append(report.value)
        if on_step:
            on_step(step, report)
        if run_dir and every and step % every == 0:
            save_model(model, run_dir / f"step{step:06d}.tpseg")

    after = model.group_checksums()
    record = RunRecord(losses, cfg.checksum(), 0.0)
    record.audit = {g: (before[g], after[g]) for g in before}
    if run_dir:
        record.checkpoint = str(run_dir / "final.tpseg")
        save_model(model, record.checkpoint)
        (run_dir / "losses.txt").write_text("".join(f"{v!r}\n" for v in losses))
    record.wall_clock = time.perf_counter() - started
    for line in record.audit_lines():
        log.info("audit %s", line)
    return model, record


def evaluate(model, samples, threshold=0.5, predictor=None):
    """Prompt every class on every sample; pooled per-class metrics.

    ``predictor(sample, class_id) -> prob map`` overrides the model (harness self-tests).
    """
    acc = MetricAccumulator(threshold)
    for sample in samples:
        for cls in CLASSES:
            if predictor is not None:
                prob = predictor(sample, cls)
            else:
                prob = predict_mask(model, sample.image, cls).data
            acc.add(sample.sample_id, cls, prob, sample.masks[cls])
    return acc.report()


def overlay(image, prob, threshold=0.5, color=(0.0, 1.0, 0.0)):
    """Paint the predicted mask boundary onto the image; other pixels are untouched."""
    mask = np.asarray(prob) >= threshold
    inner = mask.copy()
    inner[1:, :] &= mask[:-1, :]
    inner[:-1, :] &= mask[1:, :]
    inner[:, 1:] &= mask[:, :-1]
    inner[:, :-1] &= mask[:, 1:]
    edge = mask & ~inner
    out = np.array(image, copy=True)
    out[edge] = np.asarray(color, dtype=out.dtype)
    return out


def predict_files(model, image, class_id, out_dir, stem="image", threshold=0.5):
    """Write probability PGM, raw float32 dump and overlay PPM; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prob = predict_mask(model, image, class_id).data.astype(np.float32)
    h, w = prob.shape
    paths = {
        "pgm": out_dir / f"{stem}_{class_id}_prob.pgm",
        "raw": out_dir / f"{stem}_{class_id}_prob_{w}x{h}.f32",
        "overlay": out_dir / f"{stem}_{class_id}_overlay.ppm",
    }
    paths["pgm"].write_bytes(encode_pgm(prob))
    paths["raw"].write_bytes(prob.astype("<f4").tobytes())
    paths["overlay"].write_bytes(encode_ppm(overlay(image, prob, threshold)))
    return paths


def ablate(cfg, train_samples, eval_samples, variants=None, run_dir=None):
    """Train and evaluate each variant on identical data and seeds."""
    results = {}
    for name in variants or ABLATIONS:
        vcfg = cfg.updated(ABLATIONS[name])
        sub = Path(run_dir) / name if run_dir else None
        model, record = train(vcfg, train_samples, sub)
        with no_grad():
            record.metrics = evaluate(model, eval_samples, cfg["eval.threshold"])
        if sub:
            (sub / "metrics.txt").write_text(record.metrics.to_kv())
        results[name] = record
    return results


def ablation_table(results):
    lines = [f"{'variant':<16} {'mDice':>7} {'AUC-ROC':>8} {'AUC-PR':>7} {'final loss':>11}"]
    for name, rec in results.items():
        m = rec.metrics
        tail = float(np.mean(rec.losses[-10:])) if rec.losses else float("nan")
        lines.append(f"{name:<16} {100 * m.mean_dice:7.2f} {100 * m.mean_auc_roc:8.2f} "
                     f"{100 * m.mean_auc_pr:7.2f} {tail:11.4f}")
    return "\n".join(lines)


