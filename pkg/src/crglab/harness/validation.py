"""Exact-vs-first-order validation: compare the estimator with do-differences on
sampled heads, stratified into VRI-ranked (Top) and uniformly sampled (Random) heads.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from ..cre import ROUTES, exact_effects, first_order_from_model, vri
from ..errors import InputError
from ..model.decoder import DecoderModel
from ..model.objective import YesNoMargin
from ..reports import AuditReport
from .tasks import TaskInstance

SUBSETS = ("All", "Top", "Random")


@dataclass(frozen=True)
class SampleSpec:
    n_examples: int = 20
    k_heads: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_examples < 1:
            raise InputError("n_examples must be positive")
        if self.k_heads < 2:
            raise InputError("k_heads must be at least 2 (half Top, half Random)")


@dataclass
class PairRecord:
    example: int
    layer: int
    head: int
    subset: str
    vri: float
    est_vis: float
    exact_vis: float
    est_txt: float
    exact_txt: float


def _corr(fn, x, y) -> float:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(fn(x, y).statistic)


def _same_sign(a, b) -> np.ndarray:
    return np.sign(a) == np.sign(b)


def sample_pairs(model: DecoderModel, tasks: Sequence[TaskInstance], spec: SampleSpec) -> list[PairRecord]:
    cfg = model.config
    n_heads = cfg.layers * cfg.heads
    k = spec.k_heads
    if k > n_heads:
        warnings.warn(f"k_heads={k} exceeds the {n_heads} available heads; clipped", stacklevel=2)
        k = n_heads
    if spec.n_examples > len(tasks):
        warnings.warn(f"{spec.n_examples} examples requested, only {len(tasks)} tasks given", stacklevel=2)
    rng = np.random.default_rng(spec.seed)
    kind = YesNoMargin(cfg.yes_token, cfg.no_token)
    out = []
    for task in tasks[: spec.n_examples]:
        est, _, _ = first_order_from_model(model, task.tokens, task.layout, kind)
        scores = {s.key: s.value for s in vri(est)}
        ranked = sorted(scores, key=lambda h: (scores[h], h))
        top = ranked[: k // 2]
        rest = ranked[k // 2 :]
        pick = rng.choice(len(rest), size=min(k - k // 2, len(rest)), replace=False)
        rand = [rest[i] for i in sorted(pick)]
        chosen = [(h, "Top") for h in top] + [(h, "Random") for h in rand]
        exact = {e.key: e for e in exact_effects(model, task.tokens, task.layout, kind, heads=[h for h, _ in chosen])}
        by_key = {e.key: e for e in est}
        for h, subset in chosen:
            e, x = by_key[h], exact[h]
            out.append(PairRecord(task.index, h[0], h[1], subset, scores[h], e.d_vis, x.d_vis, e.d_txt, x.d_txt))
    return out


def summarize_pairs(pairs: Sequence[PairRecord], name: str = "exact_validation") -> AuditReport:
    rows = []
    summary: dict = {"pairs": len(pairs)}
    for subset in SUBSETS:
        sel = [p for p in pairs if subset == "All" or p.subset == subset]
        both = None
        for route in ROUTES:
            est = np.array([getattr(p, f"est_{route}") for p in sel])
            ex = np.array([getattr(p, f"exact_{route}") for p in sel])
            agree = _same_sign(est, ex)
            row = {
                "route": route,
                "subset": subset,
                "n": len(sel),
                "pearson": _corr(stats.pearsonr, est, ex),
                "spearman": _corr(stats.spearmanr, est, ex),
                "sign_agreement": float(agree.mean()) if sel else float("nan"),
                "mean_abs_error": float(np.mean(np.abs(est - ex))) if sel else float("nan"),
            }
            rows.append(row)
            both = agree if both is None else both & agree
            for key in ("pearson", "spearman", "sign_agreement"):
                summary[f"{route}.{subset}.{key}"] = row[key]
        rate = float(both.mean()) if sel else float("nan")
        rows.append({"route": "both", "subset": subset, "n": len(sel), "both_routes_correct": rate})
        summary[f"both.{subset}.both_routes_correct"] = rate
    return AuditReport(name, rows, summary)


def exact_validation(model: DecoderModel, tasks: Sequence[TaskInstance], spec: SampleSpec = SampleSpec()) -> AuditReport:
    """Pearson/Spearman correlation and sign agreement between estimate and do-difference.

    Per example, the K/2 heads with the smallest VRI form the Top subset and K/2
    further heads drawn uniformly from the rest form the Random subset.
    """
    pairs = sample_pairs(model, tasks, spec)
    report = summarize_pairs(pairs)
    report.summary["sample_spec"] = asdict(spec)
    report.pairs = pairs  # kept for callers that want the raw table
    return report


def pair_rows(pairs: Sequence[PairRecord]) -> list[dict]:
    return [asdict(p) for p in pairs]


def pooled(reports: Sequence[AuditReport]) -> AuditReport:
    """Merge the raw pairs of several reports (e.g. several seeded models) and re-summarize."""
    pairs = [p for r in reports for p in getattr(r, "pairs", [])]
    if not pairs:
        raise InputError("no pair tables to pool")
    return summarize_pairs(pairs)


def finite(x: float) -> bool:
    return isinstance(x, float) and math.isfinite(x)
