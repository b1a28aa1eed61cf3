"""Train the full model for a few hundred steps and look at the metrics.

Takes a couple of minutes on one CPU core. Pass ``--steps 50`` for a quick look.
"""

import argparse

import numpy as np

from tpdrseg.config import Config
from tpdrseg.model import predict_mask
from tpdrseg.synth import SynthConfig, generate_dataset
from tpdrseg.train import evaluate, train

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=300)
args = parser.parse_args()

cfg = Config({"train.steps": args.steps})
sc = SynthConfig.from_config(cfg)
train_set, eval_set = generate_dataset(sc, 0, 200), generate_dataset(sc, 200, 50)


def show(step, report):
    if step % 50 == 0 or step == 1:
        print(f"step {step:4d}  loss {report.value:.3f}")


model, run = train(cfg, train_set, on_step=show)
losses = run.losses
print(f"loss: first 10 steps {np.mean(losses[:10]):.3f}, last 10 steps {np.mean(losses[-10:]):.3f}")
for line in run.audit_lines():
    print("  ", line)

report = evaluate(model, eval_set)
print(report.to_table())

# one exudate-bearing image: predicted probability on and off the lesion
sample = next(s for s in eval_set if s.masks["EX"].any())
prob = predict_mask(model, sample.image, "EX").data
mask = sample.masks["EX"] == 1
print(f"EX on {sample.sample_id}: mean prob on lesion {prob[mask].mean():.3f}, off lesion {prob[~mask].mean():.3f}")
