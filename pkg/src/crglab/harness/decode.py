"""Regular and CRG decoding loops over task instances."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from ..gating import SchedulePolicy, StepTimer, crg_step
from ..model.decoder import DecoderModel, forward
from ..model.objective import TokenLogProb, YesNoMargin
from .tasks import TaskInstance

DISCRIMINATIVE = "discriminative"
GENERATIVE = "generative"


@dataclass
class StepRecord:
    token: int
    base_margin: float
    margin: float
    patch: dict
    intervened: bool

    def to_dict(self) -> dict:
        return {
            "token": self.token,
            "base_margin": self.base_margin,
            "margin": self.margin,
            "patch": [[l, h, g] for (l, h), g in sorted(self.patch.items())],
            "intervened": self.intervened,
        }


@dataclass
class Transcript:
    index: int
    mode: str
    crg: bool
    answer: int
    emitted: list[int]
    steps: list[StepRecord]
    prior_agrees: bool
    logits: np.ndarray
    timing: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "mode": self.mode,
            "crg": self.crg,
            "answer": self.answer,
            "emitted": self.emitted,
            "prior_agrees": self.prior_agrees,
            "steps": [s.to_dict() for s in self.steps],
            "logits": self.logits.tolist(),
        }


def _margin(logits: np.ndarray, model: DecoderModel) -> float:
    return float(logits[model.config.yes_token] - logits[model.config.no_token])


def _yes_no(logits: np.ndarray, model: DecoderModel) -> int:
    # ties resolve to No so an uninformative score never claims the object
    return model.config.yes_token if _margin(logits, model) > 0 else model.config.no_token


def _step(model, tokens, layout, kind, policy, timer):
    """One decode step; returns (emission logits, base logits, patch)."""
    if policy is None:
        t0 = time.perf_counter()
        logits, _ = forward(model, tokens, layout)
        if timer is not None:
            timer.add("base_forward", time.perf_counter() - t0)
        return logits, logits, {}
    step = crg_step(model, tokens, layout, kind, policy, timer)
    return step.logits, step.base_logits, step.record["patch"]


def decode(
    model: DecoderModel,
    task: TaskInstance,
    policy: SchedulePolicy | None = None,
    mode: str = DISCRIMINATIVE,
    max_tokens: int = 1,
) -> Transcript:
    """Discriminative: one step, answer = argmax over {Yes, No} of the (gated) logits.

    Generative: greedy emission for ``max_tokens`` steps; each step scores the
    token the ungated pass would emit and recomputes the gates from scratch.
    ``policy=None`` is regular decoding.
    """
    if mode not in (DISCRIMINATIVE, GENERATIVE):
        raise InputError(f"unknown decode mode {mode!r}")
    if mode == GENERATIVE and max_tokens < 1:
        raise InputError("generative decoding needs max_tokens >= 1")
    cfg = model.config
    timer = StepTimer()
    tokens, layout = list(task.tokens), task.layout
    steps: list[StepRecord] = []
    t_start = time.perf_counter()
    if mode == DISCRIMINATIVE:
        kind = YesNoMargin(cfg.yes_token, cfg.no_token)
        logits, base, patch = _step(model, tokens, layout, kind, policy, timer)
        answer = _yes_no(logits, model)
        steps.append(StepRecord(answer, _margin(base, model), _margin(logits, model), patch, bool(patch)))
        emitted = [answer]
    else:
        emitted = []
        kind = lambda z: TokenLogProb(int(np.argmax(z)))  # noqa: E731
        for _ in range(max_tokens):
            logits, base, patch = _step(model, tokens, layout, kind, policy, timer)
            tok = int(np.argmax(logits))
            steps.append(StepRecord(tok, _margin(base, model), _margin(logits, model), patch, bool(patch)))
            emitted.append(tok)
            tokens.append(tok)
            layout = layout.extend(1)
        answer = emitted[0]
    total_ms = (time.perf_counter() - t_start) * 1e3
    timing = dict(timer.blocks)
    timing["other"] = max(total_ms - sum(timing.values()), 0.0)
    timing["total"] = total_ms
    return Transcript(task.index, mode, policy is not None, answer, emitted, steps, task.prior_agrees, logits, timing)


def decode_all(model, tasks, policy=None, mode=DISCRIMINATIVE, max_tokens=1) -> list[Transcript]:
    return [decode(model, t, policy, mode, max_tokens) for t in tasks]
