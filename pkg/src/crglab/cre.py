"""Causal route effects: exact do-differences and their gradient estimators."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine.kernels import frobenius, frobenius_norm
from .engine.sweep import SensitivityBundle, backward_sweep
from .errors import InputError, StateError
from .model.config import GateTable, ModalityLayout
from .model.decoder import DecoderModel, RouteCache, forward
from .model.objective import ObjectiveKind, objective

EXACT = "exact"
FIRST_ORDER = "first_order"
RIEMANN = "riemann"
ROUTES = ("vis", "txt")


@dataclass(frozen=True)
class RouteEffect:
    layer: int
    head: int
    d_vis: float
    d_txt: float
    method: str
    m: int | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.layer, self.head)

    def route(self, name: str) -> float:
        return self.d_vis if name == "vis" else self.d_txt

    @property
    def method_label(self) -> str:
        return f"{self.method}(m={self.m})" if self.method == RIEMANN else self.method


@dataclass(frozen=True)
class VriScore:
    layer: int
    head: int
    value: float
    epsilon: float = 1e-8

    @property
    def key(self) -> tuple[int, int]:
        return (self.layer, self.head)


def _heads(model: DecoderModel) -> list[tuple[int, int]]:
    return [(l, h) for l in range(model.config.layers) for h in range(model.config.heads)]


def _gate(gates: GateTable, layer: int, head: int, route: str, value: float) -> GateTable:
    return gates.with_gate(layer, head, **{route: value})


def exact_effects(
    model: DecoderModel,
    tokens: Sequence[int],
    layout: ModalityLayout,
    kind: ObjectiveKind,
    workers: int = 1,
    heads: Sequence[tuple[int, int]] | None = None,
) -> list[RouteEffect]:
    """Single-head do-interventions: Delta = l(1,1) - l(route off), one head at a time.

    ``heads`` restricts the toggles to a subset; results follow its order.
    """
    ones = model.ones_gates()
    targets = _heads(model) if heads is None else [tuple(h) for h in heads]
    base = objective(forward(model, tokens, layout, ones)[0], kind)

    def toggle(job):
        l, h, route = job
        return objective(forward(model, tokens, layout, _gate(ones, l, h, route, 0.0))[0], kind)

    jobs = [(l, h, r) for (l, h) in targets for r in ROUTES]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            off = list(pool.map(toggle, jobs))
    else:
        off = [toggle(j) for j in jobs]
    out = []
    for i, (l, h) in enumerate(targets):
        out.append(RouteEffect(l, h, base - off[2 * i], base - off[2 * i + 1], EXACT))
    return out


def first_order_effects(cache: RouteCache, sens: SensitivityBundle) -> list[RouteEffect]:
    """<G, O^vis> and <G, O^txt> per head, i.e. the gate derivatives at (1, 1)."""
    out = []
    for key in sorted(cache.heads):
        hr = cache.heads[key]
        G = sens.head_grads.get(key)
        if G is None or G.shape != hr.o_vis.shape:
            raise StateError(f"sensitivity block for head {key} missing or mis-shaped")
        out.append(RouteEffect(key[0], key[1], frobenius(G, hr.o_vis), frobenius(G, hr.o_txt), FIRST_ORDER))
    return out


def first_order_from_model(
    model: DecoderModel, tokens: Sequence[int], layout: ModalityLayout, kind: ObjectiveKind
) -> tuple[list[RouteEffect], RouteCache, SensitivityBundle]:
    """One forward, one reverse sweep, then the estimator."""
    _, cache = forward(model, tokens, layout)
    sens = backward_sweep(model, cache, kind)
    return first_order_effects(cache, sens), cache, sens


def gate_path_gradient(
    model: DecoderModel,
    tokens: Sequence[int],
    layout: ModalityLayout,
    kind: ObjectiveKind,
    layer: int,
    head: int,
    route: str,
    tau: float,
) -> tuple[float, np.ndarray]:
    """(d l / d g_route, G) at gate ``tau`` on one route of one head, all others 1."""
    gates = _gate(model.ones_gates(), layer, head, route, tau)
    _, cache = forward(model, tokens, layout, gates)
    sens = backward_sweep(model, cache, kind)
    d_vis, d_txt = sens.gate_grads[(layer, head)]
    return (d_vis if route == "vis" else d_txt), sens.head_grads[(layer, head)]


def riemann_effects(
    model: DecoderModel,
    tokens: Sequence[int],
    layout: ModalityLayout,
    kind: ObjectiveKind,
    m: int,
) -> list[RouteEffect]:
    """Right-endpoint m-point Riemann sum of the gate-path derivative over [0, 1]."""
    if m < 1:
        raise InputError("riemann_effects needs m >= 1")
    # gate derivatives at tau = k/m for every head/route; tau = 1 is the shared base pass
    samples: dict[tuple[int, int, str], list[float]] = {}
    _, cache = forward(model, tokens, layout)
    base = backward_sweep(model, cache, kind).gate_grads
    for (l, h) in _heads(model):
        for i, route in enumerate(ROUTES):
            vals = [
                gate_path_gradient(model, tokens, layout, kind, l, h, route, k / m)[0]
                for k in range(1, m)
            ]
            vals.append(base[(l, h)][i])
            samples[(l, h, route)] = vals
    return [
        RouteEffect(
            l, h,
            math.fsum(samples[(l, h, "vis")]) / m,
            math.fsum(samples[(l, h, "txt")]) / m,
            RIEMANN, m,
        )
        for (l, h) in _heads(model)
    ]


def vri(effects: Sequence[RouteEffect], epsilon: float = 1e-8) -> list[VriScore]:
    """|d_vis| / (|d_vis| + |d_txt| + eps); small values mark text-driven heads."""
    if not epsilon > 0:
        raise InputError("VRI epsilon must be positive")
    return [
        VriScore(e.layer, e.head, abs(e.d_vis) / (abs(e.d_vis) + abs(e.d_txt) + epsilon), epsilon)
        for e in effects
    ]


@dataclass(frozen=True)
class RouteBound:
    layer: int
    head: int
    route: str
    exact: float
    estimate: float
    residual: float
    l_hat: float
    route_norm: float
    bound: float
    bound_holds: bool
    margin: bool
    safe_margin: bool
    sign_agrees: bool


@dataclass
class BoundReport:
    rows: list[RouteBound]
    path_samples: int
    safety_factor: float = 2.0

    def certified(self) -> list[RouteBound]:
        """Routes whose estimate clears the safety-inflated bound."""
        return [r for r in self.rows if r.safe_margin]

    def sign_violations(self) -> list[RouteBound]:
        return [r for r in self.certified() if not r.sign_agrees]


def bound_report(
    model: DecoderModel,
    tokens: Sequence[int],
    layout: ModalityLayout,
    kind: ObjectiveKind,
    path_samples: int = 16,
    safety_factor: float = 2.0,
    slack: float = 1e-12,
) -> BoundReport:
    """Residual |Delta - Delta_hat| against the empirical (L_hat / 2) * ||O_route||_F.

    L_hat is the largest sampled quotient ||G(tau,1) - G(1,1)||_F / (1 - tau) over
    tau = k / path_samples, k = 0 .. path_samples-1.  It is an estimate, not a
    certified Lipschitz constant.  ``slack`` absorbs rounding when the bound is 0.
    """
    if path_samples < 2:
        raise InputError("bound_report needs path_samples >= 2")
    exact = {e.key: e for e in exact_effects(model, tokens, layout, kind)}
    est, cache, sens = first_order_from_model(model, tokens, layout, kind)
    rows = []
    for e in est:
        l, h = e.key
        hr = cache.heads[(l, h)]
        G1 = sens.head_grads[(l, h)]
        for route in ROUTES:
            o_route = hr.o_vis if route == "vis" else hr.o_txt
            l_hat = 0.0
            for k in range(path_samples):
                tau = k / path_samples
                _, G = gate_path_gradient(model, tokens, layout, kind, l, h, route, tau)
                l_hat = max(l_hat, frobenius_norm(G - G1) / (1.0 - tau))
            d_exact = exact[(l, h)].route(route)
            d_hat = e.route(route)
            norm = frobenius_norm(o_route)
            bound = 0.5 * l_hat * norm
            residual = abs(d_exact - d_hat)
            rows.append(RouteBound(
                l, h, route, d_exact, d_hat, residual, l_hat, norm, bound,
                bound_holds=residual <= bound + slack,
                margin=abs(d_hat) > bound,
                safe_margin=abs(d_hat) > safety_factor * bound,
                sign_agrees=bool(np.sign(d_hat) == np.sign(d_exact)),
            ))
    return BoundReport(rows, path_samples, safety_factor)
