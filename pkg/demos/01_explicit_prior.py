"""Where does each text description point on a synthetic fundus image?

Builds one sample, computes the explicit prior for every class with the
oracle-color backend and prints how much prior mass lands on the true lesion
pixels versus the rest of the retina.
"""

import numpy as np

from tpdrseg.config import CLASSES, Config
from tpdrseg.prior import ClassPrompt, OracleColor, explicit_prior, resize_nearest
from tpdrseg.synth import SynthConfig, generate_sample

cfg = Config()
sample = generate_sample(SynthConfig.from_config(cfg), 4)
backend = OracleColor()

print(f"sample {sample.sample_id}, classes present: {sample.present_classes()}")
for cls in CLASSES:
    prompt = ClassPrompt.default(cls, cfg.descriptions())
    pe = explicit_prior(backend, sample.image, prompt).values.data
    full = resize_nearest(pe, 64, 64)
    mask = sample.masks[cls] == 1
    inside = full[mask].mean() if mask.any() else float("nan")
    print(f"{cls}  '{prompt.description}'")
    print(f"    prior on lesion {inside:.3f}   elsewhere {full[~mask].mean():.3f}")

# a coarse text rendering of the EX prior (16x16 cells)
pe = explicit_prior(backend, sample.image, ClassPrompt.default("EX")).values.data
shades = " .:-=+*#%@"
for row in pe:
    print("".join(shades[min(int(v * len(shades)), len(shades) - 1)] * 2 for v in row))
