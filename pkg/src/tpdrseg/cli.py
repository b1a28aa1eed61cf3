"""Command line: synth, train, eval, predict, gradcheck, ablate.

Exit codes: 0 success, 1 validation/format problems, 2 numeric failures
(including a failed gradient check).
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checks import format_table, run_all
from .config import CLASSES, PAPER_SCALE, Config
from .dataset import read_dataset, read_ppm, write_dataset
from .errors import NumericError, TPSegError
from .synth import SynthConfig, generate_dataset, split_ids
from .tensor import no_grad
from .train import ABLATIONS, ablate, ablation_table, evaluate, load_model, predict_files, train

log = logging.getLogger("tpdrseg")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2


def build_config(args, fallback=None):
    """Defaults <- paper-scale preset <- config file <- --set overrides."""
    path = args.config or (fallback if fallback and Path(fallback).exists() else None)
    cfg = Config.load(path) if path else Config()
    if args.paper_scale:
        cfg = cfg.updated(PAPER_SCALE)
    return cfg.apply(args.set).validate()


def write_run_manifest(run_dir, command, cfg, extra=None):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(run_dir / "config.txt")
    files = sorted(str(p.relative_to(run_dir)) for p in run_dir.rglob("*") if p.is_file() and p.name != "manifest.txt")
    lines = [f"command = {command}", f"version = {__version__}", f"config_checksum = {cfg.checksum()}"]
    lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
    lines += [f"file = {f}" for f in files]
    (run_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _load_split(path, what):
    data = read_dataset(path)
    for w in data.warnings:
        log.warning("%s: %s", path, w)
    if not len(data):
        raise TPSegError(f"{what} dataset at {path} is empty")
    return list(data)


def cmd_synth(args):
    cfg = build_config(args)
    sc = SynthConfig.from_config(cfg)
    n_train, n_eval = cfg["synth.n_train"], cfg["synth.n_eval"]
    samples = generate_dataset(sc, 0, n_train + n_eval)
    if args.hash_split:
        frac = n_eval / max(n_train + n_eval, 1)
        train_ids, eval_ids = split_ids(range(len(samples)), frac, cfg["synth.seed"])
    else:
        train_ids, eval_ids = range(n_train), range(n_train, n_train + n_eval)
    meta = {"seed": cfg["synth.seed"], "size": cfg["synth.size"], "config_checksum": cfg.checksum()}
    out = Path(args.out)
    write_dataset(out / "train", [samples[i] for i in train_ids], dict(meta, split="train"))
    write_dataset(out / "eval", [samples[i] for i in eval_ids], dict(meta, split="eval"))
    write_run_manifest(out, "synth", cfg, {"train": len(train_ids), "eval": len(eval_ids)})
    print(f"wrote {len(train_ids)} train / {len(eval_ids)} eval samples to {out}")
    return EXIT_OK


def cmd_train(args):
    cfg = build_config(args)
    samples = _load_split(args.dataset, "training")
    run_dir = Path(args.run_dir)

    def progress(step, report):
        if not np.isfinite(report.value):
            raise NumericError(f"loss became non-finite at step {step}")
        if step % args.log_every == 0 or step == 1:
            print(f"step {step:5d}  loss {report.value:.4f}  bce {report.bce:.4f}  iou {report.iou:.4f}")

    _, record = train(cfg, samples, run_dir, on_step=progress)
    for line in record.audit_lines():
        print("audit", line)
    if not record.frozen_unchanged():
        raise NumericError("a frozen parameter group changed during training")
    write_run_manifest(run_dir, "train", cfg, {"steps": len(record.losses),
                                               "wall_clock_s": f"{record.wall_clock:.1f}"})
    print(f"checkpoint {record.checkpoint}")
    return EXIT_OK


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    cfg = build_config(args, ckpt.parent / "config.txt")
    samples = _load_split(args.dataset, "evaluation")
    if args.gt_as_prediction:
        # harness self-test: feed the ground truth through the metric pipeline
        report = evaluate(None, samples, cfg["eval.threshold"], predictor=lambda s, c: s.masks[c].astype(float))
    else:
        model = load_model(ckpt, cfg)
        with no_grad():
            report = evaluate(model, samples, cfg["eval.threshold"])
    print(report.to_table())
    if args.run_dir:
        run_dir = Path(args.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "metrics.txt").write_text(report.to_kv())
        write_run_manifest(run_dir, "eval", cfg, {"checkpoint": ckpt})
    return EXIT_OK


def cmd_predict(args):
    ckpt = Path(args.checkpoint)
    cfg = build_config(args, ckpt.parent / "config.txt")
    if args.class_id not in CLASSES:
        raise TPSegError(f"unknown class {args.class_id!r}; valid classes: {', '.join(CLASSES)}")
    model = load_model(ckpt, cfg)
    image = read_ppm(args.image)
    paths = predict_files(model, image, args.class_id, args.out_dir, Path(args.image).stem, cfg["eval.threshold"])
    for p in paths.values():
        print(p)
    return EXIT_OK


def cmd_gradcheck(args):
    started = time.perf_counter()
    rows = run_all(seed=args.seed, tol=args.tol)
    print(format_table(rows))
    print(f"({time.perf_counter() - started:.1f} s)")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_NUMERIC


def cmd_ablate(args):
    cfg = build_config(args)
    train_samples = _load_split(args.train, "training")
    eval_samples = _load_split(args.eval, "evaluation")
    variants = args.variants or list(ABLATIONS)
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise TPSegError(f"unknown variant(s) {unknown}; valid: {', '.join(ABLATIONS)}")
    results = ablate(cfg, train_samples, eval_samples, variants, args.run_dir)
    table = ablation_table(results)
    print(table)
    (Path(args.run_dir) / "ablation.txt").write_text(table + "\n")
    write_run_manifest(args.run_dir, "ablate", cfg, {"variants": " ".join(variants)})
    return EXIT_OK


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--paper-scale", action="store_true", help="1024x1024 preset (builds; slow)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tpdrseg", description="Text-prompted lesion segmentation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("out")
    p.add_argument("--hash-split", action="store_true", help="split by sample-id hash instead of id ranges")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train on a dataset directory")
    p.add_argument("dataset")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--log-every", type=int, default=25)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("dataset")
    p.add_argument("--run-dir")
    p.add_argument("--gt-as-prediction", action="store_true", help="metric harness self-test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="probability map and overlay for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("class_id", metavar="class")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks of ops and modules")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate ablation variants")
    p.add_argument("train")
    p.add_argument("eval")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--variants", nargs="+", metavar="NAME", help=f"subset of {', '.join(ABLATIONS)}")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (NumericError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (TPSegError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
