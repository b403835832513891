"""Seeded model/input suites shared by the experiments and the test-suite."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..model.config import ModalityLayout, ModelConfig
from ..model.decoder import DecoderModel, init_random, param_shapes
from ..model.objective import YesNoMargin
from ..model.planted import PlantedSpec, init_planted
from .tasks import TaskSpec, generate_tasks


@dataclass
class Case:
    model: DecoderModel
    tokens: list[int]
    layout: ModalityLayout

    @property
    def kind(self) -> YesNoMargin:
        return YesNoMargin(self.model.config.yes_token, self.model.config.no_token)


def random_case(seed: int, layers: int = 2, heads: int = 2, head_dim: int = 4, mlp_dim: int = 16,
                vocab: int = 12, length: int = 8, n_visual: int = 4) -> Case:
    """Random nonlinear decoder with a random prompt whose first ``n_visual`` positions are visual."""
    cfg = ModelConfig(layers=layers, heads=heads, model_dim=heads * head_dim, head_dim=head_dim,
                      mlp_dim=mlp_dim, vocab=vocab, seed=seed)
    rng = np.random.default_rng(seed + 100_003)
    tokens = rng.integers(0, vocab, length).tolist()
    return Case(init_random(cfg), tokens, ModalityLayout.prefix(n_visual, length))


def random_suite(n: int, seed: int = 0, **kw) -> Iterator[Case]:
    for i in range(n):
        yield random_case(seed + i, **kw)


def linear_case(seed: int, heads: int = 2, head_dim: int = 4, vocab: int = 12,
                length: int = 8, n_visual: int = 4) -> Case:
    """Downstream-linear decoder: one layer, zero MLP, no final norm.

    The decision score is then affine in every gate, so first-order effects are exact.
    """
    cfg = ModelConfig(layers=1, heads=heads, model_dim=heads * head_dim, head_dim=head_dim,
                      mlp_dim=4, vocab=vocab, seed=seed, final_norm=False)
    base = init_random(cfg)
    zeros = {n: np.zeros(s) for n, s in param_shapes(cfg).items() if n.endswith(("w1", "w2"))}
    rng = np.random.default_rng(seed + 200_003)
    tokens = rng.integers(0, vocab, length).tolist()
    return Case(base.replace(**zeros), tokens, ModalityLayout.prefix(n_visual, length))


def planted_suite(n: int = 200, seed: int = 0, spec: TaskSpec | None = None,
                  planted: PlantedSpec | None = None):
    """Planted model plus a seeded probe set (default: 25% cue/image conflicts)."""
    planted = planted or PlantedSpec()
    spec = spec or TaskSpec(n_visual=planted.n_visual, vocab=planted.vocab)
    return init_planted(planted), generate_tasks(spec, n, seed)


def validation_model(seed: int = 0) -> DecoderModel:
    """Random decoder sized for the probe vocabulary, used by the exact-validation suite."""
    vocab = TaskSpec().vocab.size
    return init_random(ModelConfig(layers=2, heads=4, model_dim=16, head_dim=4, mlp_dim=32,
                                   vocab=vocab, seed=seed))


def trained_model(seed: int = 0, steps: int = 60, n_train: int = 400) -> DecoderModel:
    """Validation-sized decoder trained briefly on probes with background patches."""
    from .train import train

    spec = TaskSpec(background_max=2)
    model, _ = train(validation_model(seed), generate_tasks(spec, n_train, seed + 1), steps=steps,
                     lr=0.2, batch=16, seed=seed)
    return model
