"""Minimal trainer: plain gradient ascent on log p(answer) at the query position.

Only used to obtain decoders with learned (rather than random or planted) heads;
the gradients come straight from the engine's reverse sweep.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..engine.sweep import backward_sweep
from ..errors import InputError
from ..model.decoder import DecoderModel, forward
from ..model.objective import TokenLogProb
from .tasks import TaskInstance


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)

    @property
    def final(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def train(
    model: DecoderModel,
    tasks: Sequence[TaskInstance],
    steps: int = 200,
    lr: float = 0.1,
    batch: int = 16,
    seed: int = 0,
) -> tuple[DecoderModel, TrainLog]:
    """Mini-batch gradient descent on mean cross-entropy; returns a new model."""
    if steps < 0 or batch < 1 or not tasks:
        raise InputError("train needs steps >= 0, batch >= 1 and a non-empty task list")
    rng = np.random.default_rng(seed)
    params = {k: np.array(v) for k, v in model.params.items()}
    log = TrainLog()
    for _ in range(steps):
        current = DecoderModel(model.config, params)
        acc = {k: np.zeros_like(v) for k, v in params.items()}
        total = 0.0
        idx = rng.choice(len(tasks), size=min(batch, len(tasks)), replace=False)
        for i in idx:
            t = tasks[int(i)]
            _, cache = forward(current, t.tokens, t.layout)
            sens = backward_sweep(current, cache, TokenLogProb(t.answer), with_params=True)
            total -= sens.value
            for k, g in sens.param_grads.items():
                acc[k] += g
        n = len(idx)
        # ascent on log-likelihood == descent on cross-entropy
        params = {k: params[k] + lr * acc[k] / n for k in params}
        log.losses.append(total / n)
    return DecoderModel(model.config, params), log
