"""Binary-probe metrics with Yes as the positive class."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InputError
from ..reports import write_csv, write_json
from .decode import Transcript


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        # no positive predictions: precision is reported as 0
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def yes_ratio(self) -> float:
        return (self.tp + self.fp) / self.n if self.n else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n, "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
            "f1": self.f1, "yes_ratio": self.yes_ratio,
        }


def confusion(predicted: Sequence[int], truths: Sequence[int], yes_token: int) -> Confusion:
    if len(predicted) != len(truths):
        raise InputError(f"{len(predicted)} predictions vs {len(truths)} truths")
    tp = fp = fn = tn = 0
    for p, t in zip(predicted, truths):
        py, ty = p == yes_token, t == yes_token
        if py and ty:
            tp += 1
        elif py:
            fp += 1
        elif ty:
            fn += 1
        else:
            tn += 1
    return Confusion(tp, fp, fn, tn)


@dataclass
class EvalSummary:
    overall: Confusion
    conditions: dict[str, Confusion]
    timing: dict[str, float] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.overall.accuracy

    @property
    def precision(self) -> float:
        return self.overall.precision

    @property
    def recall(self) -> float:
        return self.overall.recall

    @property
    def f1(self) -> float:
        return self.overall.f1

    def rows(self) -> list[dict]:
        out = [{"condition": "all", **self.overall.to_dict()}]
        out += [{"condition": k, **c.to_dict()} for k, c in sorted(self.conditions.items())]
        return out

    def to_dict(self) -> dict:
        return {"metrics": self.rows(), "timing_ms": self.timing}

    def to_json(self, path=None) -> str:
        return write_json(path, self.to_dict())

    def to_csv(self, path=None) -> str:
        return write_csv(path, self.rows())


def evaluate(transcripts: Sequence[Transcript], truths: Sequence[int], yes_token: int = 0) -> EvalSummary:
    """Accuracy / precision / recall / F1 overall and split by prior agreement.

    ``timing`` holds the mean milliseconds per block across transcripts.
    """
    if len(transcripts) != len(truths):
        raise InputError(f"{len(transcripts)} transcripts vs {len(truths)} truths")
    preds = [t.answer for t in transcripts]
    overall = confusion(preds, truths, yes_token)
    conditions = {}
    for name, flag in (("agree", True), ("conflict", False)):
        idx = [i for i, t in enumerate(transcripts) if t.prior_agrees == flag]
        if idx:
            conditions[name] = confusion([preds[i] for i in idx], [truths[i] for i in idx], yes_token)
    timing: dict[str, float] = {}
    if transcripts:
        blocks = sorted({b for t in transcripts for b in t.timing})
        timing = {b: float(np.mean([t.timing.get(b, 0.0) for t in transcripts])) for b in blocks}
    return EvalSummary(overall, conditions, timing)
