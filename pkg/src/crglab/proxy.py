"""Visual attention ratio (VAR) and the checks showing why it is not decision-aligned.

All quantities here are taken at one query row ``i``.  For a head in the last
layer the row term <G(i), O_vis(i)> is the whole first-order effect; for earlier
layers it is the query-row contribution to it.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .cre import RouteEffect, first_order_effects, vri
from .engine import kernels as K
from .engine.sweep import SensitivityBundle
from .errors import InputError, InsufficientDataError
from .model.config import ModalityLayout
from .model.decoder import HeadRoutes, RouteCache
from .reports import AuditReport

BOUND_SLACK = 1e-10


@dataclass(frozen=True)
class VarScore:
    layer: int
    head: int
    query: int | None
    value: float
    averaged: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return (self.layer, self.head)


def _query_index(query: int | None, length: int) -> int:
    q = length - 1 if query is None else query
    if q < 0:
        q += length
    if not 0 <= q < length:
        raise InputError(f"query position {query} outside [0, {length})")
    return q


def var(cache: RouteCache, layout: ModalityLayout, query: int | None = None, average: bool = False) -> list[VarScore]:
    """Attention mass on visual keys, per head, at one query row (default: last).

    ``average=True`` averages the per-row ratio over every query position instead.
    """
    vis = layout.vis_mask
    out = []
    for (l, h) in sorted(cache.heads):
        alpha = cache.heads[(l, h)].alpha
        if average:
            value = float(np.mean(alpha[:, vis].sum(axis=1)))
            out.append(VarScore(l, h, None, value, True))
        else:
            q = _query_index(query, alpha.shape[0])
            out.append(VarScore(l, h, q, math.fsum(alpha[q, vis]), False))
    return out


@dataclass
class AlignmentStats:
    a: np.ndarray
    m: float
    s: float
    alpha_tilde: np.ndarray | None
    var: float


def alignment_stats(g_row, alpha_row, values, vis_mask) -> AlignmentStats:
    """a_j = <G(i), v_j> over visual keys, their max |a_j|, and the attention-weighted RMS."""
    g_row = np.asarray(g_row, dtype=np.float64).ravel()
    vis = np.asarray(vis_mask, dtype=bool)
    alpha_vis = np.asarray(alpha_row, dtype=np.float64)[vis]
    a = K.matmul(np.asarray(values)[vis], g_row.reshape(-1, 1)).ravel() if vis.any() else np.zeros(0)
    mass = math.fsum(alpha_vis)
    m = float(np.max(np.abs(a))) if a.size else 0.0
    if mass > 0:
        tilde = alpha_vis / mass
        s = math.sqrt(math.fsum(tilde * a * a))
    else:
        tilde, s = None, 0.0
    return AlignmentStats(a, m, s, tilde, mass)


@dataclass
class HeadBoundCheck:
    layer: int
    head: int
    var: float
    estimate: float
    m: float
    s: float
    lemma_a1: bool
    lemma_a2: bool | None
    s_le_m: bool | None
    sign_consistent: bool
    a_lower: float | None
    a_upper: float | None
    prop_a3: bool | None


def check_bounds(
    cache: RouteCache,
    sens: SensitivityBundle,
    layout: ModalityLayout,
    query: int | None = None,
    slack: float = BOUND_SLACK,
) -> list[HeadBoundCheck]:
    """Verify |est| <= VAR*s <= VAR*m, and the sign-consistent two-sided bound when it applies."""
    rows = []
    for key in sorted(cache.heads):
        hr = cache.heads[key]
        q = _query_index(query, hr.alpha.shape[0])
        g_row = sens.head_grads[key][q]
        st = alignment_stats(g_row, hr.alpha[q], hr.v, layout.vis_mask)
        est = K.frobenius(g_row, hr.o_vis[q])
        a1 = abs(est) <= st.m * st.var + slack
        if st.var > 0:
            a2 = abs(est) <= st.var * st.s + slack
            s_le_m = st.s <= st.m + slack
        else:
            a2 = s_le_m = None
        consistent = bool(st.a.size) and (bool((st.a >= 0).all()) or bool((st.a <= 0).all()))
        if consistent and st.var > 0:
            lo, hi = float(st.a.min()), float(st.a.max())
            a3 = lo * st.var - slack <= est <= hi * st.var + slack
        else:
            lo = hi = a3 = None
        rows.append(HeadBoundCheck(key[0], key[1], st.var, est, st.m, st.s, a1, a2, s_le_m, consistent, lo, hi, a3))
    return rows


@dataclass
class CompetitionLedger:
    ratio: float
    alpha: np.ndarray
    text_keys: list[int]
    analytic: list[float]
    finite_diff: list[float]
    rel_err: list[float]
    increases_when_lowered: list[bool]

    @property
    def max_rel_err(self) -> float:
        return max(self.rel_err) if self.rel_err else 0.0

    def ok(self, rtol: float = 1e-5) -> bool:
        return self.max_rel_err <= rtol and all(self.increases_when_lowered)


def _visual_ratio(logits: np.ndarray, vis: np.ndarray) -> float:
    alpha = K.masked_softmax(logits.reshape(1, -1), causal=False)[0]
    return math.fsum(alpha[vis])


def softmax_competition(logits, layout: ModalityLayout | Sequence[bool], step: float = 1e-6, drop: float = 1.0) -> CompetitionLedger:
    """dR/ds_k = -R * alpha_k for every textual key k, checked by central differences."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    vis = layout.vis_mask if isinstance(layout, ModalityLayout) else np.asarray(layout, dtype=bool)
    if vis.size != z.size:
        raise InputError("layout length does not match the logit row")
    if not vis.any() or vis.all():
        raise InputError("softmax_competition needs at least one visual and one textual key")
    alpha = K.masked_softmax(z.reshape(1, -1), causal=False)[0]
    R = math.fsum(alpha[vis])
    keys = np.flatnonzero(~vis).tolist()
    analytic, fd, rel, up = [], [], [], []
    for k in keys:
        d_an = -R * alpha[k]
        zp, zm, zd = z.copy(), z.copy(), z.copy()
        zp[k] += step
        zm[k] -= step
        zd[k] -= drop
        d_fd = (_visual_ratio(zp, vis) - _visual_ratio(zm, vis)) / (2 * step)
        analytic.append(d_an)
        fd.append(d_fd)
        rel.append(abs(d_fd - d_an) / max(abs(d_an), 1e-300))
        up.append(_visual_ratio(zd, vis) > R)
    return CompetitionLedger(R, alpha, keys, analytic, fd, rel, up)


class Mode(str, enum.Enum):
    ORTHOGONAL = "orthogonal"
    CANCELLING = "cancelling"
    HARMFUL = "harmful"
    NON_IDENTIFIABLE = "non_identifiable"


@dataclass
class RouteFragment:
    """Minimal stand-in for a RouteCache: just the per-head route tensors."""

    heads: dict[tuple[int, int], HeadRoutes] = field(default_factory=dict)


@dataclass
class Counterexample:
    mode: Mode
    g: np.ndarray
    alpha: np.ndarray
    vis_mask: np.ndarray
    values: np.ndarray
    predicted: float
    alt_values: np.ndarray | None = None
    alt_predicted: float | None = None

    @property
    def var(self) -> float:
        return math.fsum(self.alpha[self.vis_mask])

    def _fragment(self, values: np.ndarray) -> tuple[RouteFragment, SensitivityBundle]:
        alpha = self.alpha.reshape(1, -1)
        v_vis = np.where(self.vis_mask[:, None], values, 0.0)
        v_txt = np.where(~self.vis_mask[:, None], values, 0.0)
        o_vis = K.matmul(alpha, v_vis)
        o_txt = K.matmul(alpha, v_txt)
        hr = HeadRoutes(alpha, np.zeros((1, 1)), np.zeros((values.shape[0], 1)), values, o_vis, o_txt, o_vis + o_txt, 1.0, 1.0)
        sens = SensitivityBundle(0.0, {(0, 0): self.g.reshape(1, -1)}, {})
        return RouteFragment({(0, 0): hr}), sens

    def estimate(self, alternative: bool = False) -> float:
        """First-order visual effect computed through the regular estimator."""
        values = self.alt_values if alternative else self.values
        frag, sens = self._fragment(values)
        return first_order_effects(frag, sens)[0].d_vis

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode.value,
            "g": self.g.tolist(),
            "alpha": self.alpha.tolist(),
            "vis_mask": self.vis_mask.tolist(),
            "values": self.values.tolist(),
            "predicted": self.predicted,
            "var": self.var,
        }
        if self.alt_values is not None:
            d["alt_values"] = self.alt_values.tolist()
            d["alt_predicted"] = self.alt_predicted
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Counterexample":
        alt = d.get("alt_values")
        return cls(
            Mode(d["mode"]), np.array(d["g"]), np.array(d["alpha"]), np.array(d["vis_mask"], dtype=bool),
            np.array(d["values"]), d["predicted"],
            None if alt is None else np.array(alt), d.get("alt_predicted"),
        )


def build_counterexample(
    mode: Mode | str,
    g,
    bound: float = 1.0,
    alpha=None,
    vis_mask=None,
    seed: int = 0,
) -> Counterexample:
    """Concrete attention/value assignments for the VAR failure modes.

    ``bound`` is the value-norm bound V used by the non-identifiable pair.  Custom
    ``alpha`` / ``vis_mask`` apply to HARMFUL and NON_IDENTIFIABLE; the other two
    modes fix VAR = 1 by construction.
    """
    mode = Mode(mode)
    g = np.asarray(g, dtype=np.float64).ravel()
    norm = K.frobenius_norm(g)
    rng = np.random.default_rng(seed)
    d = g.size
    if mode is Mode.ORTHOGONAL:
        alpha = np.array([0.5, 0.3, 0.2])
        vis = np.ones(3, dtype=bool)
        raw = rng.standard_normal((3, d))
        if norm > 0:
            u = g / norm
            raw = raw - np.outer(raw @ u, u)
            raw = raw - np.outer(raw @ u, u)
        return Counterexample(mode, g, alpha, vis, raw, 0.0)
    if norm == 0:
        raise InputError(f"{mode.value} construction needs a nonzero sensitivity vector")
    u = g / norm
    if mode is Mode.CANCELLING:
        alpha = np.array([0.5, 0.5])
        vis = np.ones(2, dtype=bool)
        values = np.stack([u / norm, -u / norm])  # a = (+1, -1)
        return Counterexample(mode, g, alpha, vis, values, 0.0)
    if alpha is None:
        alpha = np.array([0.45, 0.45, 0.1])
        vis_mask = np.array([True, True, False])
    alpha = np.asarray(alpha, dtype=np.float64)
    vis = np.asarray(vis_mask, dtype=bool)
    if alpha.shape != vis.shape:
        raise InputError("alpha and vis_mask must have the same length")
    mass = math.fsum(alpha[vis])
    if mode is Mode.HARMFUL:
        scales = np.where(vis, -(1.0 + np.arange(alpha.size)), 0.0)
        values = scales[:, None] * u[None, :]
        predicted = norm * math.fsum(alpha * scales)
        return Counterexample(mode, g, alpha, vis, values, predicted)
    # NON_IDENTIFIABLE: v_j = +V u versus v_j = -V u on the visual keys
    values = np.where(vis[:, None], bound * u[None, :], 0.0)
    pred = bound * norm * mass
    return Counterexample(mode, g, alpha, vis, values, pred, -values, -pred)


def _spearman(x, y) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = stats.spearmanr(x, y).statistic
    return float(rho)


def alignment_report(
    effects: Sequence[RouteEffect],
    var_scores: Sequence[VarScore],
    epsilon: float = 1e-8,
    top_fraction: float = 0.1,
) -> AuditReport:
    """Pooled agreement between VAR and the decision-aligned visual effect.

    ``effects[i]`` and ``var_scores[i]`` must describe the same head at the same
    decoding step; pairs from many heads and examples are pooled.
    """
    if len(effects) != len(var_scores):
        raise InputError("effects and VAR scores must be paired one to one")
    for e, v in zip(effects, var_scores):
        if e.key != v.key:
            raise InputError(f"unpaired head: effect {e.key} vs VAR {v.key}")
    n = len(effects)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 paired observations, got {n}")
    var_v = np.array([v.value for v in var_scores])
    d_vis = np.array([e.d_vis for e in effects])
    vri_v = np.array([s.value for s in vri(effects, epsilon)])
    threshold = float(np.percentile(var_v, 100 * (1 - top_fraction)))
    top = var_v >= threshold
    summary = {
        "pairs": n,
        "rho_var_abs_dvis": _spearman(var_v, np.abs(d_vis)),
        "rho_var_vri": _spearman(var_v, vri_v),
        "p_dvis_negative": float(np.mean(d_vis < 0)),
        "p_dvis_negative_top": float(np.mean(d_vis[top] < 0)),
        "top_fraction": top_fraction,
        "var_threshold": threshold,
        "top_pairs": int(top.sum()),
    }
    rows = [
        {"statistic": "spearman(VAR, |d_vis|)", "value": summary["rho_var_abs_dvis"], "pairs": n},
        {"statistic": "spearman(VAR, VRI)", "value": summary["rho_var_vri"], "pairs": n},
        {"statistic": "P(d_vis < 0)", "value": summary["p_dvis_negative"], "pairs": n},
        {"statistic": "P(d_vis < 0 | VAR top)", "value": summary["p_dvis_negative_top"], "pairs": int(top.sum())},
        {"statistic": "VAR threshold", "value": threshold, "pairs": n},
    ]
    return AuditReport("var_alignment", rows, summary)
