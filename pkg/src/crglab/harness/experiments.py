"""Experiment runners behind the CLI.  Each writes its reports into ``out`` and
returns (list of written file names, summary lines).
"""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..cre import first_order_effects, first_order_from_model, vri
from ..errors import ConfigError
from ..gating import SchedulePolicy, plan_gates
from ..model.decoder import DecoderModel, forward
from ..model.io import load
from ..model.objective import YesNoMargin
from ..model.planted import PlantedSpec, init_planted
from ..proxy import Mode, alignment_report, build_counterexample, check_bounds, softmax_competition, var
from ..reports import write_csv, write_effects_csv, write_json, write_jsonl
from ..engine.sweep import backward_sweep
from .decode import decode_all
from .metrics import confusion, evaluate
from .suites import trained_model, validation_model
from .tasks import TaskSpec, generate_tasks, write_tasks
from .timing import timing_breakdown
from .validation import SampleSpec, exact_validation, pair_rows

EXPERIMENTS = ("demo", "validate", "sweep", "audit", "timing")


@dataclass
class RunConfig:
    experiment: str = "demo"
    seed: int = 0
    out: str = "runs/latest"
    model: dict = field(default_factory=lambda: {"source": "planted"})
    policy: dict = field(default_factory=dict)
    tasks: dict = field(default_factory=lambda: {"n": 200})
    validation: dict = field(default_factory=lambda: {"n_examples": 20, "k_heads": 4})
    grid: dict = field(default_factory=dict)
    timing_steps: int = 20
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "seed": self.seed, "out": self.out, "model": self.model,
            "policy": self.policy_obj().to_dict(), "tasks": self.tasks, "validation": self.validation,
            "grid": self.grid, "timing_steps": self.timing_steps, "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d.get("config", d))  # a manifest carries its config under "config"
        d.pop("schema", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def policy_obj(self) -> SchedulePolicy:
        return SchedulePolicy.from_dict(self.policy)

    def task_spec(self) -> TaskSpec:
        d = {k: v for k, v in self.tasks.items() if k != "n"}
        return TaskSpec.from_dict(d)

    def n_tasks(self) -> int:
        return int(self.tasks.get("n", 200))


def build_model(cfg: RunConfig) -> DecoderModel:
    src = cfg.model.get("source", "planted")
    if src == "planted":
        spec = PlantedSpec.from_dict({k: v for k, v in cfg.model.items() if k != "source"})
        return init_planted(spec)
    if src == "random":
        return validation_model(int(cfg.model.get("seed", cfg.seed)))
    if src == "trained":
        return trained_model(int(cfg.model.get("seed", cfg.seed)), int(cfg.model.get("steps", 60)))
    if src == "file":
        if "path" not in cfg.model:
            raise ConfigError("model source 'file' needs a 'path'")
        return load(cfg.model["path"])
    raise ConfigError(f"unknown model source {src!r}")


def _tasks(cfg: RunConfig):
    return generate_tasks(cfg.task_spec(), cfg.n_tasks(), cfg.seed)


def run_demo(cfg: RunConfig, model: DecoderModel, out: Path):
    tasks = _tasks(cfg)
    truths = [t.answer for t in tasks]
    regular = decode_all(model, tasks)
    gated = decode_all(model, tasks, cfg.policy_obj())
    ev_reg, ev_crg = evaluate(regular, truths), evaluate(gated, truths)
    rows = [{"decoding": "regular", **r} for r in ev_reg.rows()] + [{"decoding": "crg", **r} for r in ev_crg.rows()]
    write_csv(out / "metrics.csv", rows)
    write_json(out / "metrics.json", {"regular": ev_reg.to_dict(), "crg": ev_crg.to_dict()})
    write_tasks(out / "tasks.jsonl", tasks)
    write_jsonl(out / "transcripts.jsonl", [{"decoding": "regular", **t.to_dict()} for t in regular]
                + [{"decoding": "crg", **t.to_dict()} for t in gated])
    kind = YesNoMargin(model.config.yes_token, model.config.no_token)
    effects, _, _ = first_order_from_model(model, tasks[0].tokens, tasks[0].layout, kind)
    write_effects_csv(out / "effects.csv", effects, vri(effects))
    lines = [
        f"tasks: {len(tasks)} ({sum(not t.prior_agrees for t in tasks)} cue/image conflicts)",
        f"regular: accuracy {ev_reg.accuracy:.4f}  F1 {ev_reg.f1:.4f}",
        f"crg:     accuracy {ev_crg.accuracy:.4f}  F1 {ev_crg.f1:.4f}",
    ]
    return ["metrics.csv", "metrics.json", "tasks.jsonl", "transcripts.jsonl", "effects.csv"], lines


def counterexample_ledger(seed: int, dim: int = 4, bound: float = 1.0) -> list[dict]:
    g = np.random.default_rng(seed).standard_normal(dim)
    out = []
    for mode in Mode:
        ce = build_counterexample(mode, g, bound=bound, seed=seed)
        row = {**ce.to_dict(), "estimate": ce.estimate()}
        if ce.alt_values is not None:
            row["alt_estimate"] = ce.estimate(alternative=True)
            row["difference"] = row["estimate"] - row["alt_estimate"]
        out.append(row)
    return out


def run_validate(cfg: RunConfig, model: DecoderModel, out: Path):
    tasks = _tasks(cfg)
    v = cfg.validation
    spec = SampleSpec(int(v.get("n_examples", 20)), int(v.get("k_heads", 4)), int(v.get("seed", cfg.seed)))
    report = exact_validation(model, tasks, spec)
    report.to_json(out / "exact_validation.json")
    report.to_csv(out / "exact_validation.csv")
    write_csv(out / "exact_validation_pairs.csv", pair_rows(report.pairs))
    write_json(out / "counterexamples.json", {"constructions": counterexample_ledger(cfg.seed)})
    lines = [f"exact validation on {report.summary['pairs']} head pairs"]
    for r in report.rows:
        if r["route"] == "both":
            lines.append(f"  both routes correct [{r['subset']}]: {r['both_routes_correct']:.3f}")
        else:
            lines.append(f"  {r['route']:3s} {r['subset']:6s} pearson {r['pearson']:.3f} "
                         f"spearman {r['spearman']:.3f} sign {r['sign_agreement']:.3f}")
    return ["exact_validation.json", "exact_validation.csv", "exact_validation_pairs.csv", "counterexamples.json"], lines


@dataclass
class _Prepared:
    answer: int
    prior_agrees: bool
    tokens: tuple
    layout: object
    base_logits: np.ndarray
    effects: list


def _prepare(model, tasks):
    kind = YesNoMargin(model.config.yes_token, model.config.no_token)
    prepared = []
    for t in tasks:
        logits, cache = forward(model, t.tokens, t.layout)
        effects = first_order_effects(cache, backward_sweep(model, cache, kind))
        prepared.append(_Prepared(t.answer, t.prior_agrees, t.tokens, t.layout, logits, effects))
    return prepared


def _cell(args):
    model, prepared, policy = args
    cfg = model.config
    preds = []
    for p in prepared:
        gates, record = plan_gates(p.effects, policy, cfg.layers, cfg.heads)
        logits = p.base_logits if not record["patch"] else forward(model, p.tokens, p.layout, gates)[0]
        preds.append(cfg.yes_token if logits[cfg.yes_token] - logits[cfg.no_token] > 0 else cfg.no_token)
    c = confusion(preds, [p.answer for p in prepared], cfg.yes_token)
    return c.accuracy, c.f1


def sweep_grid(cfg: RunConfig, n_layers: int) -> list[SchedulePolicy]:
    base = cfg.policy_obj()
    g = cfg.grid
    ks = g.get("k", list(range(1, 17)))
    gammas = g.get("gamma", [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0])
    windows = g.get("windows", [[base.layer_start, base.layer_end]])
    if not ks or not gammas or not windows:
        raise ConfigError("sweep grid has an empty axis")
    return [replace(base, k=int(k), gamma=float(gm), layer_start=w[0], layer_end=w[1])
            for w, k, gm in itertools.product(windows, ks, gammas)]


def run_sweep(cfg: RunConfig, model: DecoderModel, out: Path):
    tasks = _tasks(cfg)
    prepared = _prepare(model, tasks)
    cells = sweep_grid(cfg, model.config.layers)
    jobs = [(model, prepared, p) for p in cells]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]
    best = max(range(len(cells)), key=lambda i: (results[i][1], -i))
    rows = []
    for i, (p, (acc, f1)) in enumerate(zip(cells, results)):
        start, end = p.window(model.config.layers)
        rows.append({"cell": i, "k": p.k, "gamma": p.gamma, "layer_start": start, "layer_end": end,
                     "accuracy": acc, "f1": f1, "best": i == best})
    write_csv(out / "sweep.csv", rows)
    b = rows[best]
    lines = [f"sweep: {len(rows)} cells on {len(tasks)} tasks",
             f"best cell {best}: k={b['k']} gamma={b['gamma']} layers {b['layer_start']}:{b['layer_end']} "
             f"accuracy {b['accuracy']:.4f} F1 {b['f1']:.4f}"]
    return ["sweep.csv"], lines


def run_audit(cfg: RunConfig, model: DecoderModel, out: Path):
    tasks = _tasks(cfg)
    kind = YesNoMargin(model.config.yes_token, model.config.no_token)
    effects, var_scores, bounds = [], [], []
    for t in tasks:
        est, cache, sens = first_order_from_model(model, t.tokens, t.layout, kind)
        effects += est
        var_scores += var(cache, t.layout)
        bounds += [{"task": t.index, **vars(b)} for b in check_bounds(cache, sens, t.layout)]
    report = alignment_report(effects, var_scores)
    report.to_json(out / "var_alignment.json")
    report.to_csv(out / "var_alignment.csv")
    write_csv(out / "bound_checks.csv", bounds)
    rng = np.random.default_rng(cfg.seed)
    comp = []
    for i in range(20):
        row = rng.normal(size=8)
        led = softmax_competition(row, np.arange(8) < 4)
        comp.append({"row": i, "ratio": led.ratio, "max_rel_err": led.max_rel_err, "monotone": all(led.increases_when_lowered)})
    write_csv(out / "softmax_competition.csv", comp)
    fails = sum(1 for b in bounds if not b["lemma_a1"] or b["lemma_a2"] is False)
    s = report.summary
    lines = [f"VAR audit over {s['pairs']} head/step pairs",
             f"  spearman(VAR, |d_vis|) = {s['rho_var_abs_dvis']:.4f}",
             f"  spearman(VAR, VRI)     = {s['rho_var_vri']:.4f}",
             f"  P(d_vis < 0) = {s['p_dvis_negative']:.3f}; within top-10% VAR = {s['p_dvis_negative_top']:.3f}",
             f"  bound-chain violations: {fails}"]
    return ["var_alignment.json", "var_alignment.csv", "bound_checks.csv", "softmax_competition.csv"], lines


def run_timing(cfg: RunConfig, model: DecoderModel, out: Path):
    task = _tasks(cfg)[0]
    table = timing_breakdown(model, task, cfg.policy_obj(), steps=cfg.timing_steps)
    table.to_csv(out / "timing.csv")
    write_json(out / "timing.json", {"steps": table.steps, "mean_ms": table.mean_ms, "share_pct": table.share})
    lines = [f"per-step time {table.total_ms:.3f} ms over {table.steps} steps"]
    lines += [f"  {r['block']:14s} {r['mean_ms']:8.4f} ms {r['share_pct']:6.2f}%" for r in table.rows()]
    return ["timing.csv", "timing.json"], lines


RUNNERS = {"demo": run_demo, "validate": run_validate, "sweep": run_sweep, "audit": run_audit, "timing": run_timing}


def run(cfg: RunConfig, out: Path | None = None):
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model = build_model(cfg)
    return RUNNERS[cfg.experiment](cfg, model, out)
