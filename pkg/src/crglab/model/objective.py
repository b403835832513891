"""Scalar decision scores evaluated on final-position logits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine.kernels import logsumexp
from ..errors import InputError


@dataclass(frozen=True)
class YesNoMargin:
    """log p(Yes) - log p(No).

    Both log-probabilities share the same log-softmax normalizer, so the margin
    is exactly logit(Yes) - logit(No) and its logit gradient is e_yes - e_no.
    """

    yes_token: int
    no_token: int

    def to_dict(self) -> dict:
        return {"kind": "yes_no_margin", "yes_token": self.yes_token, "no_token": self.no_token}


@dataclass(frozen=True)
class TokenLogProb:
    """log p(target) under the next-token distribution."""

    target: int

    def to_dict(self) -> dict:
        return {"kind": "token_log_prob", "target": self.target}


ObjectiveKind = YesNoMargin | TokenLogProb


def _check_token(tok: int, vocab: int):
    if not 0 <= tok < vocab:
        raise InputError(f"objective token {tok} outside vocab of size {vocab}")


def objective(logits, kind: ObjectiveKind) -> float:
    z = np.asarray(logits, dtype=np.float64).ravel()
    if isinstance(kind, YesNoMargin):
        _check_token(kind.yes_token, z.size)
        _check_token(kind.no_token, z.size)
        return float(z[kind.yes_token] - z[kind.no_token])
    if isinstance(kind, TokenLogProb):
        _check_token(kind.target, z.size)
        return float(z[kind.target] - logsumexp(z))
    raise InputError(f"unknown objective kind {kind!r}")


def objective_grad(logits, kind: ObjectiveKind) -> np.ndarray:
    """d objective / d logits."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    g = np.zeros_like(z)
    if isinstance(kind, YesNoMargin):
        _check_token(kind.yes_token, z.size)
        _check_token(kind.no_token, z.size)
        g[kind.yes_token] += 1.0
        g[kind.no_token] -= 1.0
        return g
    if isinstance(kind, TokenLogProb):
        _check_token(kind.target, z.size)
        p = np.exp(z - logsumexp(z))
        g -= p
        g[kind.target] += 1.0
        return g
    raise InputError(f"unknown objective kind {kind!r}")


def objective_from_dict(d: dict) -> ObjectiveKind:
    if d["kind"] == "yes_no_margin":
        return YesNoMargin(int(d["yes_token"]), int(d["no_token"]))
    if d["kind"] == "token_log_prob":
        return TokenLogProb(int(d["target"]))
    raise InputError(f"unknown objective kind {d['kind']!r}")

