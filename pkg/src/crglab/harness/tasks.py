"""Synthetic binary probes: an image block, a text cue, fillers, then the question.

The image block encodes the ground truth (``img_pos`` patches for Yes,
``img_neg`` for No).  The cue states an answer too, and agrees with the image
with probability ``agreement_rate``; when it disagrees the instance is a
conflict and a text-driven head pulls toward the wrong answer.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import SCHEMA_VERSION
from ..errors import ConfigError, InputError
from ..model.config import ModalityLayout
from ..vocab import TokenVocab


@dataclass(frozen=True)
class TaskSpec:
    """``p_prior`` is how often the cue is right; ``agreement_rate`` overrides it when set."""

    n_visual: int = 4
    filler_max: int = 2
    yes_rate: float = 0.5
    p_prior: float = 0.75
    agreement_rate: float | None = None
    background_max: int = 0
    vocab: TokenVocab = field(default_factory=TokenVocab)

    def __post_init__(self):
        if self.n_visual < 1:
            raise ConfigError("task spec needs a visual block (n_visual >= 1)")
        if self.filler_max < 0 or self.background_max < 0:
            raise ConfigError("filler_max and background_max must be nonnegative")
        if self.background_max >= self.n_visual:
            raise ConfigError("background patches must leave at least one evidence patch")
        if not 0.0 <= self.yes_rate <= 1.0:
            raise ConfigError("yes_rate must lie in [0, 1]")
        if not 0.5 <= self.p_prior <= 1.0:
            raise ConfigError("p_prior must lie in [0.5, 1]")
        if self.agreement_rate is not None and not 0.0 <= self.agreement_rate <= 1.0:
            raise ConfigError("agreement_rate must lie in [0, 1]")

    @property
    def agreement(self) -> float:
        return self.p_prior if self.agreement_rate is None else self.agreement_rate

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = self.vocab.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        if "vocab" in d:
            d["vocab"] = TokenVocab.from_dict(d["vocab"])
        return cls(**d)


@dataclass(frozen=True)
class TaskInstance:
    index: int
    tokens: tuple[int, ...]
    layout: ModalityLayout
    answer: int
    image_yes: bool
    cue_yes: bool
    prior_agrees: bool

    @property
    def condition(self) -> str:
        return "agree" if self.prior_agrees else "conflict"

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "tokens": list(self.tokens),
            "layout": self.layout.to_dict(),
            "answer": self.answer,
            "image_yes": self.image_yes,
            "cue_yes": self.cue_yes,
            "prior_agrees": self.prior_agrees,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskInstance":
        return cls(
            int(d["index"]), tuple(int(t) for t in d["tokens"]), ModalityLayout.from_dict(d["layout"]),
            int(d["answer"]), bool(d["image_yes"]), bool(d["cue_yes"]), bool(d["prior_agrees"]),
        )


def make_instance(spec: TaskSpec, index: int, image_yes: bool, cue_yes: bool,
                  fillers: Sequence[int] = (), background: Sequence[int] = ()) -> TaskInstance:
    """Build one probe; ``background`` lists image positions replaced by background patches."""
    v = spec.vocab
    img = [v.img_pos if image_yes else v.img_neg] * spec.n_visual
    for pos in background:
        if not 0 <= pos < spec.n_visual:
            raise InputError(f"background position {pos} outside the image block")
        img[pos] = v.img_bg
    tokens = (*img, v.cue_yes if cue_yes else v.cue_no, *fillers, v.query)
    layout = ModalityLayout.prefix(spec.n_visual, len(tokens))
    answer = v.yes if image_yes else v.no
    return TaskInstance(index, tokens, layout, answer, image_yes, cue_yes, image_yes == cue_yes)


def generate_tasks(spec: TaskSpec, n: int, seed: int) -> list[TaskInstance]:
    if n < 1:
        raise InputError("generate_tasks needs n >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        image_yes = bool(rng.random() < spec.yes_rate)
        agrees = bool(rng.random() < spec.agreement)
        n_fill = int(rng.integers(0, spec.filler_max + 1))
        fillers = [int(t) for t in rng.choice(spec.vocab.fillers, size=n_fill)]
        n_bg = int(rng.integers(0, spec.background_max + 1))
        background = sorted(int(p) for p in rng.choice(spec.n_visual, size=n_bg, replace=False))
        out.append(make_instance(spec, i, image_yes, image_yes == agrees, fillers, background))
    return out


def write_tasks(path: Path | str, tasks: Sequence[TaskInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps({"schema": SCHEMA_VERSION, **t.to_dict()}) + "\n")


def read_tasks(path: Path | str) -> list[TaskInstance]:
    with open(path, encoding="utf-8") as fh:
        return [TaskInstance.from_dict(json.loads(line)) for line in fh if line.strip()]
