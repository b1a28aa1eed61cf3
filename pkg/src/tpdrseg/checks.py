"""Finite-difference gradient checks: every op, every module, the whole loss.

Everything runs at 64-bit. Ops are looked up on :mod:`tpdrseg.tensor` at call
time, so a patched (e.g. deliberately broken) op shows up in its row.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import CLASSES, Config
from .encoder import Encoder, Injector, encoder_forward
from .decoder import MaskDecoder
from .gradcheck import finite_difference_gradcheck
from .losses import total_loss
from .prompts import PromptGenerator
from .errors import GenerationError
from .synth import SynthConfig, generate_sample
from .tensor import Tensor

F64 = np.float64


@dataclass
class CheckRow:
    name: str
    max_rel_error: float
    tol: float

    @property
    def passed(self):
        return bool(self.max_rel_error < self.tol)


def _leaf(rng, shape, positive=False):
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True, dtype=F64)


# name -> (fn, input shapes); a leading "+" marks a strictly positive input
OPS = {
    "add": (lambda a, b: T.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: T.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: T.mul(a, b), [(2, 3, 4), (3, 1)]),
    "div": (lambda a, b: T.div(a, b), [(3, 4), ("+", 3, 4)]),
    "neg": (lambda a: T.neg(a), [(4,)]),
    "power": (lambda a: T.power(a, 3), [(4,)]),
    "exp": (lambda a: T.exp(a), [(4, 2)]),
    "log": (lambda a: T.log(a), [("+", 4, 2)]),
    "sqrt": (lambda a: T.sqrt(a), [("+", 5)]),
    "sigmoid": (lambda a: T.sigmoid(a), [(3, 3)]),
    "tanh": (lambda a: T.tanh(a), [(3, 3)]),
    "gelu": (lambda a: T.gelu(a), [(3, 5)]),
    "clamp": (lambda a: T.clamp(a, -10.0, 10.0), [(5,)]),
    "reshape": (lambda a: T.mul(T.reshape(a, (6, 2)), T.reshape(a, (6, 2))), [(3, 4)]),
    "permute": (lambda a: T.permute(a, (2, 0, 1)), [(2, 3, 4)]),
    "transpose_last": (lambda a: T.transpose_last(a), [(2, 3, 4)]),
    "getitem": (lambda a: T.mul(T.getitem(a, slice(1, 3)), T.getitem(a, slice(0, 2))), [(4, 3)]),
    "concat": (lambda a, b: T.power(T.concat([a, b], axis=0), 2), [(2, 3), (4, 3)]),
    "reduce_sum": (lambda a: T.reduce_sum(a, axis=1), [(3, 4)]),
    "reduce_mean": (lambda a: T.reduce_mean(a, axis=0, keepdims=True), [(3, 4)]),
    "reduce_max": (lambda a: T.reduce_max(a, axis=-1), [(3, 5)]),
    "reduce_min": (lambda a: T.reduce_min(a), [(3, 5)]),
    "matmul": (lambda a, b: T.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "linear": (lambda x, w, b: T.linear(x, w, b), [(5, 3), (3, 4), (4,)]),
    "softmax": (lambda a: T.softmax(a), [(3, 6)]),
    "l2_normalize": (lambda a: T.l2_normalize(a), [(4, 5)]),
    "layer_norm": (lambda x, w, b: T.layer_norm(x, w, b), [(4, 6), (6,), (6,)]),
    "conv1x1": (lambda x, w, b: T.conv1x1(x, w, b, stride=2), [(8, 8, 3), (3, 4), (4,)]),
    "conv1x1_stride4": (lambda x, w, b: T.conv1x1(x, w, b, stride=4), [(8, 8, 3), (3, 4), (4,)]),
    "upsample_nearest": (lambda a: T.power(T.upsample_nearest(a, 4), 2), [(2, 3, 2)]),
    "upsample_bilinear": (lambda a: T.power(T.upsample_bilinear(a, 2), 2), [(3, 2, 2)]),
}


def op_rows(seed=0, tol=1e-4):
    rows = []
    for name, (fn, shapes) in OPS.items():
        rng = np.random.default_rng([seed, len(name), 1])
        inputs = [_leaf(rng, s[1:], True) if s[0] == "+" else _leaf(rng, s) for s in shapes]
        res = finite_difference_gradcheck(fn, inputs, seed=seed)
        rows.append(CheckRow(f"op/{name}", res.max_rel_error, tol))
    return rows


def _jitter(module, rng, scale=0.05):
    # zero-initialised projections would hide most gradients; nudge everything
    for _, p in module.named_parameters():
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return module


def _check_params(name, fn, params, seed, tol, max_entries=16):
    params = list(params)
    for p in params:
        p.requires_grad = True
    res = finite_difference_gradcheck(lambda *_: fn(), params, seed=seed, max_entries=max_entries)
    return CheckRow(name, res.max_rel_error, tol)


def module_rows(seed=0, tol=1e-4):
    rng = np.random.default_rng([seed, 99])
    rows = []
    width, grid = 8, 8
    f = _leaf(rng, (grid, grid, width))
    prior = rng.uniform(size=(grid, grid))

    inj = _jitter(Injector(width, 4, rng, stride=4, dtype=F64), rng)
    res = finite_difference_gradcheck(lambda x: inj(x, prior), [f], seed=seed)
    rows.append(CheckRow("module/injector[input]", res.max_rel_error, tol))
    rows.append(_check_params("module/injector[params]", lambda: inj(f, prior),
                              [p for n, p in inj.named_parameters() if n != "gamma"], seed, tol))
    rows.append(_check_params("module/injector[gamma]", lambda: inj(f, prior), [inj.gamma], seed, tol))

    enc = Encoder(16, 2, width, 1, 2, rng, F64)
    image = rng.uniform(size=(16, 16, 3))
    inj1 = _jitter(Injector(width, 4, rng, stride=4, dtype=F64), rng)
    rows.append(_check_params("module/encoder+injector", lambda: encoder_forward(enc, {0: inj1}, image, prior).final,
                              inj1.parameters(), seed, tol))

    cpg = _jitter(PromptGenerator(width, grid, 4, rng, F64), rng)
    for cls in CLASSES:
        def prompts(cls=cls):
            out = cpg(f, prior, cls)
            return T.concat([out.dense.reshape(grid * grid, width), out.sparse], axis=0)
        rows.append(_check_params(f"module/cpg.{cls}", prompts, cpg.group(cls).parameters(), seed, tol))

    dec = _jitter(MaskDecoder(width, grid, 2, rng, rounds=2, head_dim=4, dtype=F64), rng)
    pr = cpg(f, prior, "EX")
    rows.append(_check_params("module/decoder", lambda: dec(f, pr), dec.parameters(), seed, tol, max_entries=8))
    rows.append(_check_params("module/decoder.mask_token", lambda: dec(f, pr), [dec.mask_token], seed, tol))
    res = finite_difference_gradcheck(lambda x: dec(x, pr), [_leaf(rng, (grid, grid, width))], seed=seed)
    rows.append(CheckRow("module/decoder[input]", res.max_rel_error, tol))
    return rows


TINY = {
    "dtype": "float64", "model.input_size": 32, "model.patch": 4, "model.width": 16, "model.blocks": 2,
    "injector.key_dim": 8, "decoder.head_dim": 4, "cpg.sparse_tokens": 4,
    "synth.size": 32, "synth.ma.max": 2, "synth.he.max": 1, "synth.ex.max": 1, "synth.se.max": 1,
}


def tiny_model(seed=0):
    from .model import TPDRSeg

    cfg = Config().updated(dict(TINY, seed=seed))
    model = TPDRSeg(cfg)
    rng = np.random.default_rng([seed, 7])
    for _, p in model.named_parameters():
        if p.requires_grad:
            p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    synth = SynthConfig.from_config(cfg)
    for sample_id in range(100):  # a 32 px disc is cramped; take the first layout that fits
        try:
            return model, generate_sample(synth, sample_id)
        except GenerationError:
            continue
    raise GenerationError("no tiny sample could be generated")


def end_to_end_rows(seed=0, tol=1e-4):
    """Loss (BCE + soft IoU over all four class prompts) against each trainable group."""
    model, sample = tiny_model(seed)
    priors = {c: model.explicit_prior(sample.image, c) for c in CLASSES}

    def loss():
        preds = [T.sigmoid(model(sample.image, c, priors[c])) for c in CLASSES]
        return total_loss(preds, [sample.masks[c] for c in CLASSES]).total

    rows = []
    for i, inj in model.injectors().items():
        rows.append(_check_params(f"e2e/injector{i}", loss,
                                  [p for n, p in inj.named_parameters() if n != "gamma"], seed, tol, 6))
        rows.append(_check_params(f"e2e/injector{i}.gamma", loss, [inj.gamma], seed, tol))
    rows.append(_check_params("e2e/cpg", loss, model.cpg.parameters(), seed, tol, 6))
    rows.append(_check_params("e2e/decoder", loss, model.decoder.parameters(), seed, tol, 4))
    return rows


def run_all(seed=0, tol=1e-4):
    return op_rows(seed, tol) + module_rows(seed, tol) + end_to_end_rows(seed, tol)


def format_table(rows):
    width = max(len(r.name) for r in rows)
    lines = [f"{'check':<{width}}  {'max rel err':>11}  result"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:11.3e}  {'pass' if r.passed else 'FAIL'}")
    failed = sum(not r.passed for r in rows)
    lines.append(f"{len(rows) - failed}/{len(rows)} passed (tol {rows[0].tol:g})" if rows else "no checks")
    return "\n".join(lines)
