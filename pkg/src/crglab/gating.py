"""Conflict taxonomy, VRI head selection and the rank-range text-gate schedule."""
from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cre import RouteEffect, VriScore, first_order_effects, vri
from .engine.sweep import backward_sweep
from .errors import ConfigError
from .model.config import GateTable, ModalityLayout
from .model.decoder import DecoderModel, forward
from .model.objective import ObjectiveKind

Head = tuple[int, int]


class ConflictClass(str, enum.Enum):
    AGREEMENT_POS = "agreement_pos"
    AGREEMENT_NEG = "agreement_neg"
    CONFLICT_A = "conflict_a"
    CONFLICT_B = "conflict_b"
    NULL = "null"


def classify_pair(d_vis: float, d_txt: float) -> ConflictClass:
    if d_vis == 0.0 or d_txt == 0.0:
        return ConflictClass.NULL
    if d_vis > 0 and d_txt < 0:
        return ConflictClass.CONFLICT_A
    if d_vis < 0 and d_txt > 0:
        return ConflictClass.CONFLICT_B
    return ConflictClass.AGREEMENT_POS if d_vis > 0 else ConflictClass.AGREEMENT_NEG


def classify(effects: Sequence[RouteEffect]) -> dict[Head, ConflictClass]:
    return {e.key: classify_pair(e.d_vis, e.d_txt) for e in effects}


def conflict_sets(classes: dict[Head, ConflictClass]) -> tuple[list[Head], list[Head]]:
    h_a = sorted(k for k, c in classes.items() if c is ConflictClass.CONFLICT_A)
    h_b = sorted(k for k, c in classes.items() if c is ConflictClass.CONFLICT_B)
    return h_a, h_b


@dataclass
class SchedulePolicy:
    """CRG hyperparameters.

    Layer windows are 0-indexed and inclusive; ``None`` bounds mean the first or
    last layer of the model.
    """

    k: int = 11
    gamma: float = 0.5
    clip_eps: float = 1e-3
    range_a: tuple[float, float] = (0.5, 1.0)
    range_b: tuple[float, float] = (0.0, 0.5)
    layer_start: int | None = None
    layer_end: int | None = None
    topk_scope: str = "global"
    epsilon: float = 1e-8

    def __post_init__(self):
        self.range_a = tuple(float(x) for x in self.range_a)
        self.range_b = tuple(float(x) for x in self.range_b)
        if self.k < 0:
            raise ConfigError("k must be nonnegative")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if not 0 < self.clip_eps < 0.5:
            raise ConfigError("clip_eps must lie in (0, 0.5)")
        for name, (lo, hi) in (("range_a", self.range_a), ("range_b", self.range_b)):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{name} must satisfy 0 <= g_min <= g_max <= 1")
        if self.layer_start is not None and self.layer_end is not None and self.layer_start > self.layer_end:
            raise ConfigError("layer_start must not exceed layer_end")
        if self.topk_scope not in ("global", "per-layer"):
            raise ConfigError("topk_scope must be 'global' or 'per-layer'")

    def window(self, n_layers: int) -> tuple[int, int]:
        start = 0 if self.layer_start is None else self.layer_start
        end = n_layers - 1 if self.layer_end is None else min(self.layer_end, n_layers - 1)
        return start, end

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranges"] = {"A": list(self.range_a), "B": list(self.range_b)}
        del d["range_a"], d["range_b"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SchedulePolicy":
        d = dict(d)
        ranges = d.pop("ranges", None)
        if ranges:
            d["range_a"] = tuple(ranges["A"])
            d["range_b"] = tuple(ranges["B"])
        return cls(**d)


def select(conflict_set: Sequence[Head], scores: Sequence[VriScore], k: int) -> list[Head]:
    """Up to k heads with the smallest VRI, ascending; ties broken by (layer, head)."""
    if k <= 0:
        return []
    by_head = {s.key: s.value for s in scores}
    missing = [h for h in conflict_set if h not in by_head]
    if missing:
        raise ConfigError(f"no VRI score for heads {missing}")
    ranked = sorted(conflict_set, key=lambda h: (by_head[h], h))
    return ranked[:k]


def schedule_values(n: int, g_range: tuple[float, float], gamma: float, clip_eps: float) -> list[float]:
    g_min, g_max = g_range
    if n <= 0:
        return []
    if n == 1:
        return [g_min]
    out = []
    for i in range(n):
        s = i / (n - 1)
        out.append(g_min + (g_max - g_min) * float(np.clip(s**gamma, clip_eps, 1.0 - clip_eps)))
    return out


def schedule(selection: Sequence[Head], g_range: tuple[float, float], gamma: float, clip_eps: float) -> dict[Head, float]:
    """Text-gate patch for an ascending-VRI selection; visual gates are never touched."""
    return dict(zip(selection, schedule_values(len(selection), g_range, gamma, clip_eps)))


def plan_gates(
    effects: Sequence[RouteEffect],
    policy: SchedulePolicy,
    n_layers: int,
    n_heads: int,
) -> tuple[GateTable, dict]:
    """Classify, select and schedule; returns the gate table and a decision record."""
    start, end = policy.window(n_layers)
    windowed = [e for e in effects if start <= e.layer <= end]
    scores = vri(windowed, policy.epsilon)
    classes = classify(windowed)
    h_a, h_b = conflict_sets(classes)
    patch: dict[Head, float] = {}
    selections = {}
    for label, members, g_range in (("A", h_a, policy.range_a), ("B", h_b, policy.range_b)):
        if policy.topk_scope == "global":
            groups = [members]
        else:
            groups = [[h for h in members if h[0] == l] for l in range(start, end + 1)]
        chosen = []
        for group in groups:
            sel = select(group, scores, policy.k)
            patch.update(schedule(sel, g_range, policy.gamma, policy.clip_eps))
            chosen.extend(sel)
        selections[label] = chosen
    gates = GateTable.ones(n_layers, n_heads).patch(patch)
    record = {
        "classes": classes,
        "vri": {s.key: s.value for s in scores},
        "conflict_a": h_a,
        "conflict_b": h_b,
        "selected": selections,
        "patch": patch,
    }
    return gates, record


@dataclass
class StepTimer:
    """Accumulates wall-clock milliseconds per named block."""

    blocks: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, seconds: float):
        self.blocks[name] = self.blocks.get(name, 0.0) + seconds * 1e3


class _Clock:
    def __init__(self, timer: StepTimer | None):
        self.timer = timer
        self.last = time.perf_counter()

    def lap(self, name: str):
        now = time.perf_counter()
        if self.timer is not None:
            self.timer.add(name, now - self.last)
        self.last = now


@dataclass
class CrgStep:
    gates: GateTable
    logits: np.ndarray
    base_logits: np.ndarray
    objective: ObjectiveKind
    effects: list[RouteEffect]
    record: dict


def crg_step(
    model: DecoderModel,
    tokens: Sequence[int],
    layout: ModalityLayout,
    kind: ObjectiveKind | Callable[[np.ndarray], ObjectiveKind],
    policy: SchedulePolicy,
    timer: StepTimer | None = None,
) -> CrgStep:
    """Base forward, reverse sweep, first-order CRE + VRI, gate planning, gated forward.

    ``kind`` may be a callable mapping the base logits to an objective, which is how
    generative decoding scores the token the base pass would emit.
    """
    cfg = model.config
    clock = _Clock(timer)
    base_logits, cache = forward(model, tokens, layout)
    clock.lap("base_forward")
    obj = kind(base_logits) if callable(kind) else kind
    sens = backward_sweep(model, cache, obj)
    clock.lap("grad")
    effects = first_order_effects(cache, sens)
    clock.lap("compute_CRE")
    gates, record = plan_gates(effects, policy, cfg.layers, cfg.heads)
    clock.lap("gate_compute")
    logits, _ = forward(model, tokens, layout, gates)
    clock.lap("gated_forward")
    return CrgStep(gates, logits, base_logits, obj, effects, record)


def apply_crg_step(
    model: DecoderModel,
    tokens: Sequence[int],
    layout: ModalityLayout,
    kind: ObjectiveKind,
    policy: SchedulePolicy,
) -> tuple[GateTable, np.ndarray]:
    step = crg_step(model, tokens, layout, kind, policy)
    return step.gates, step.logits
