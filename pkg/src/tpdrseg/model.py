"""End-to-end text-prompted segmentation model."""

import numpy as np

from . import tensor as T
from .config import CLASSES, Config
from .decoder import MaskDecoder
from .encoder import Encoder, Injector, encoder_forward
from .errors import ValidationError
from .nn import Module
from .prior import ClassPrompt, explicit_prior, make_backend, ones_prior
from .prompts import PromptGenerator
from .tensor import no_grad

# Independent init streams per component, so switching a component off in an
# ablation leaves the initial weights of all others unchanged.
_STREAMS = {"encoder": 1, "injector": 2, "cpg": 3, "decoder": 4}

FROZEN_GROUPS = ("backend", "encoder")
TRAINABLE_GROUPS = ("injectors", "cpg", "decoder")


class TPDRSeg(Module):
    def __init__(self, cfg=None):
        cfg = (cfg or Config()).validate()
        dtype = np.dtype(cfg["dtype"])
        seed = cfg["seed"]

        def rng(name):
            return np.random.default_rng([seed, _STREAMS[name]])

        self._cfg = cfg
        self._registry = cfg.descriptions()
        size, patch, width = cfg["model.input_size"], cfg["model.patch"], cfg["model.width"]
        self.backend = make_backend(cfg).freeze()
        self.encoder = Encoder(size, patch, width, cfg["model.blocks"], cfg["model.mlp_ratio"], rng("encoder"), dtype)
        self._injector_ids = []
        if cfg["injector.enabled"]:
            inj_rng = rng("injector")
            for i in range(0, cfg["model.blocks"], cfg["injector.every"]):
                inj = Injector(width, cfg["injector.key_dim"], inj_rng, cfg["injector.stride"],
                               cfg["injector.gamma_init"], cfg["injector.query_source"], dtype)
                setattr(self, f"injector{i}", inj)
                self._injector_ids.append(i)
        grid = self.encoder.grid
        self.cpg = PromptGenerator(width, grid, cfg["cpg.sparse_tokens"], rng("cpg"), dtype)
        self.decoder = MaskDecoder(width, grid, patch, rng("decoder"), cfg["decoder.rounds"],
                                   cfg["decoder.head_dim"], cfg["decoder.upsample"], dtype)
        if cfg["decoder.frozen"]:
            self.decoder.freeze()

    @property
    def config(self):
        return self._cfg

    @property
    def input_size(self):
        return self._cfg["model.input_size"]

    def injectors(self):
        return {i: getattr(self, f"injector{i}") for i in self._injector_ids}

    def prompt(self, class_id):
        if class_id not in CLASSES:
            raise ValidationError(f"unknown class {class_id!r}; valid: {', '.join(CLASSES)}")
        return ClassPrompt(class_id, self._registry[class_id])

    def explicit_prior(self, image, prompt):
        if isinstance(prompt, str):
            prompt = self.prompt(prompt)
        return explicit_prior(self.backend, image, prompt)

    def __call__(self, image, prompt, prior=None):
        """Logits [H, W] for one image and one class prompt (class id or ClassPrompt)."""
        if isinstance(prompt, str):
            prompt = self.prompt(prompt)
        if prior is None:
            prior = self.explicit_prior(image, prompt)
        grid = self.encoder.grid
        dtype = self.encoder.stem.weight.dtype
        ones = ones_prior(grid, grid, prompt.class_id, dtype)
        inj_prior = prior if self._cfg["injector.use_prior"] else ones
        resize = self._cfg["injector.resize_prior"]
        feats = encoder_forward(self.encoder, self.injectors(), image, inj_prior, resize)
        use = self._cfg["cpg.use_prior"]
        prompts = self.cpg(feats.final, prior if use else ones, prompt.class_id, resize=resize)
        return self.decoder(feats.final, prompts)

    def groups(self):
        out = {"backend": self.backend, "encoder": self.encoder, "cpg": self.cpg, "decoder": self.decoder}
        return out

    def group_checksums(self):
        sums = {name: mod.checksum() for name, mod in self.groups().items()}
        inj = Module()
        for i, m in self.injectors().items():
            setattr(inj, f"injector{i}", m)
        sums["injectors"] = inj.checksum()
        return sums


def predict_mask(model, image, prompt, prior=None):
    """Probability map [H, W] in (0, 1)."""
    with no_grad():
        return T.sigmoid(model(image, prompt, prior))

