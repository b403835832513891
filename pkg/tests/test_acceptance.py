"""Acceptance criteria 1-12, each at its stated tolerance."""
import math
import time

import numpy as np
import pytest

from crglab.cre import bound_report, exact_effects, first_order_from_model, riemann_effects
from crglab.engine import kernels as K
from crglab.gating import SchedulePolicy, apply_crg_step, plan_gates, schedule_values, select
from crglab.cre import EXACT, RouteEffect, VriScore
from crglab.harness.decode import decode_all
from crglab.harness.metrics import evaluate
from crglab.harness.suites import linear_case, planted_suite, random_case, random_suite, trained_model
from crglab.harness.tasks import TaskSpec, generate_tasks
from crglab.harness.timing import BLOCKS, timing_breakdown
from crglab.harness.validation import SUBSETS, SampleSpec, exact_validation
from crglab.model import YesNoMargin, TokenLogProb, forward, forward_ungated, objective
from crglab.proxy import Mode, build_counterexample, check_bounds, softmax_competition

pytestmark = pytest.mark.acceptance
KIND = YesNoMargin(0, 1)


def test_01_decomposition_exactness(criterion):
    t0 = time.perf_counter()
    worst = worst_logit = 0.0
    n = 0
    for c in random_suite(100, seed=1000, length=10, n_visual=3):
        logits, cache = forward(c.model, c.tokens, c.layout)
        for hr in cache.heads.values():
            joint = K.matmul(hr.alpha, hr.v)
            worst = max(worst, float(np.abs(joint - (hr.o_vis + hr.o_txt)).max()),
                        float(np.abs(hr.alpha.sum(axis=1) - 1).max()))
        worst_logit = max(worst_logit, float(np.abs(logits - forward_ungated(c.model, c.tokens)).max()))
        n += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and worst_logit <= 1e-12 and dt < 60
    criterion(1, ok, f"{n} models, max route-split error {worst:.1e}, logit error {worst_logit:.1e}, {dt:.1f}s")
    assert ok


def _loss(c, kind, l, h, route, value):
    gates = c.model.ones_gates().with_gate(l, h, **{route: value})
    return objective(forward(c.model, c.tokens, c.layout, gates)[0], kind)


def test_02_estimator_is_directional_derivative(criterion):
    t0 = time.perf_counter()
    step, worst, triples = 1e-5, 0.0, 0
    for i, c in enumerate(random_suite(13, seed=2000)):
        kind = KIND if i % 2 == 0 else TokenLogProb(int(c.tokens[-1]))
        est, _, _ = first_order_from_model(c.model, c.tokens, c.layout, kind)
        for e in est:
            for route in ("vis", "txt"):
                fd = (_loss(c, kind, e.layer, e.head, route, 1 + step)
                      - _loss(c, kind, e.layer, e.head, route, 1 - step)) / (2 * step)
                d = e.route(route)
                worst = max(worst, abs(d - fd) / max(abs(d), abs(fd), 1e-9))
            triples += 1
    dt = time.perf_counter() - t0
    ok = triples >= 50 and worst <= 1e-6 and dt < 120
    criterion(2, ok, f"{triples} (model, input, head) triples, worst relative error {worst:.1e}, {dt:.1f}s")
    assert ok


def test_03_exact_on_linear_models(criterion):
    worst, n = 0.0, 0
    for seed in range(20):
        c = linear_case(seed, heads=2 + seed % 3)
        ex = {e.key: e for e in exact_effects(c.model, c.tokens, c.layout, KIND)}
        est, _, _ = first_order_from_model(c.model, c.tokens, c.layout, KIND)
        for e in est:
            worst = max(worst, abs(e.d_vis - ex[e.key].d_vis), abs(e.d_txt - ex[e.key].d_txt))
            n += 2
    ok = worst <= 1e-10
    criterion(3, ok, f"{n} head-routes on 20 downstream-linear models, max |est - exact| = {worst:.1e}")
    assert ok


def test_04_riemann_convergence(criterion):
    ms = (1, 2, 4, 8, 16)
    err = {m: [] for m in ms}
    for c in random_suite(6, seed=0):
        ex = {e.key: e for e in exact_effects(c.model, c.tokens, c.layout, KIND)}
        for m in ms:
            for e in riemann_effects(c.model, c.tokens, c.layout, KIND, m):
                err[m] += [abs(e.d_vis - ex[e.key].d_vis), abs(e.d_txt - ex[e.key].d_txt)]
    total = [math.fsum(err[m]) for m in ms]
    slope = float(np.polyfit(np.log(ms), np.log(total), 1)[0])
    ok = slope <= -0.8
    criterion(4, ok, f"aggregate error {[round(t, 4) for t in total]}, log-log slope {slope:.3f}")
    assert ok


def test_05_sign_reliability(criterion):
    certified = flips = rows = 0
    cases = list(random_suite(10, seed=0))
    model, tasks = planted_suite(12, seed=9)
    for c in cases:
        rep = bound_report(c.model, c.tokens, c.layout, KIND)
        rows += len(rep.rows)
        certified += len(rep.certified())
        flips += len(rep.sign_violations())
    for t in tasks:
        rep = bound_report(model, t.tokens, t.layout, KIND)
        rows += len(rep.rows)
        certified += len(rep.certified())
        flips += len(rep.sign_violations())
    ok = flips == 0 and certified > 0
    criterion(5, ok, f"{certified}/{rows} routes pass the 2x margin test, {flips} sign flips")
    assert ok


def test_06_bound_chain(criterion):
    heads = failures = 0
    model, tasks = planted_suite(20, seed=4)
    cases = [(c.model, c.tokens, c.layout) for c in random_suite(30, seed=500)]
    cases += [(model, t.tokens, t.layout) for t in tasks]
    for m, toks, lay in cases:
        _, cache, sens = first_order_from_model(m, toks, lay, KIND)
        for r in check_bounds(cache, sens, lay):
            heads += 1
            if not r.lemma_a1 or r.lemma_a2 is False or r.s_le_m is False or r.prop_a3 is False:
                failures += 1
    ok = failures == 0
    criterion(6, ok, f"{heads} heads checked, {failures} violations of |est| <= VAR*s <= VAR*m (slack 1e-10)")
    assert ok


def test_07_counterexample_battery(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(20):
        g = rng.normal(size=int(rng.integers(2, 9)))
        V = float(rng.uniform(0.1, 5))
        for mode in (Mode.ORTHOGONAL, Mode.CANCELLING):
            ce = build_counterexample(mode, g, seed=trial)
            assert ce.var == 1.0
            worst = max(worst, abs(ce.estimate()))
        ce = build_counterexample(Mode.NON_IDENTIFIABLE, g, bound=V)
        target = V * K.frobenius_norm(g) * ce.var
        worst = max(worst, abs(ce.estimate() - target), abs(ce.estimate(alternative=True) + target),
                    abs(ce.estimate() - ce.estimate(alternative=True) - 2 * target))
    ok = worst <= 1e-12
    criterion(7, ok, f"20 random G: max deviation from predicted effect {worst:.1e}")
    assert ok


def test_08_softmax_competition(criterion):
    rng = np.random.default_rng(8)
    worst, mono = 0.0, True
    for _ in range(150):
        n = int(rng.integers(2, 12))
        vis = rng.random(n) < 0.5
        vis[int(rng.integers(n))] = True
        txt = np.flatnonzero(vis)
        if vis.all():
            vis[(txt[0] + 1) % n] = False
        led = softmax_competition(rng.normal(size=n) * 2, vis)
        worst = max(worst, led.max_rel_err)
        mono &= all(led.increases_when_lowered)
    ok = worst <= 1e-5 and mono
    criterion(8, ok, f"150 rows, max relative error {worst:.1e}, R increases on every textual-logit decrease: {mono}")
    assert ok


def test_09_algorithm_semantics(criterion):
    checks = {}
    checks["n=1 -> g_min"] = schedule_values(1, (0.0, 0.5), 0.5, 1e-3) == [0.0]
    checks["hand values"] = np.allclose(schedule_values(3, (0, 0.5), 1.0, 1e-3), [0.0005, 0.25, 0.4995], rtol=0, atol=1e-15)
    vals = schedule_values(11, (0.5, 1.0), 0.5, 1e-3)
    checks["monotone"] = all(a < b for a, b in zip(vals, vals[1:]))
    rng = np.random.default_rng(9)
    ok_range = ok_vis = True
    for _ in range(50):
        eff = [RouteEffect(l, h, *rng.choice([-1, 1], 2) * rng.random(2), EXACT) for l in range(3) for h in range(4)]
        gates, rec = plan_gates(eff, SchedulePolicy(k=3), 3, 4)
        ok_vis &= bool((gates.vis == 1).all())
        ok_range &= all(0.5 <= gates.txt[h] <= 1 for h in rec["selected"]["A"])
        ok_range &= all(0 <= gates.txt[h] <= 0.5 for h in rec["selected"]["B"])
        untouched = [h for h, c in rec["classes"].items() if c.value.startswith(("agreement", "null"))]
        ok_range &= all(gates.txt[h] == 1 for h in untouched)
    checks["range discipline"] = ok_range
    checks["visual gates stay 1"] = ok_vis
    tied = [VriScore(1, 0, 0.2), VriScore(0, 3, 0.2), VriScore(0, 1, 0.2)]
    checks["tie-break"] = all(select([(1, 0), (0, 3), (0, 1)], tied, 3) == [(0, 1), (0, 3), (1, 0)] for _ in range(5))
    model, tasks = planted_suite(30, seed=3)
    same = True
    for t in tasks:
        gates, logits = apply_crg_step(model, t.tokens, t.layout, KIND, SchedulePolicy(k=0))
        same &= gates.is_identity() and logits.tobytes() == forward(model, t.tokens, t.layout)[0].tobytes()
    checks["k=0 bitwise regular"] = same
    ok = all(checks.values())
    criterion(9, ok, ", ".join(f"{k}: {v}" for k, v in checks.items()))
    assert ok


def test_10_mechanism_efficacy(criterion):
    t0 = time.perf_counter()
    model, tasks = planted_suite(240, seed=0)
    truths = [t.answer for t in tasks]
    reg = decode_all(model, tasks)
    crg = decode_all(model, tasks, SchedulePolicy())
    ev_r, ev_c = evaluate(reg, truths), evaluate(crg, truths)
    conflict_b = [i for i, t in enumerate(tasks) if not t.image_yes and t.cue_yes]
    flipped = sum(reg[i].answer != truths[i] and crg[i].answer == truths[i] for i in conflict_b)
    agree = [i for i, t in enumerate(tasks) if t.prior_agrees]
    untouched = all(reg[i].logits.tobytes() == crg[i].logits.tobytes() for i in agree)
    dt = time.perf_counter() - t0
    ok = (len(tasks) >= 200 and conflict_b and flipped == len(conflict_b) and ev_c.accuracy > ev_r.accuracy
          and ev_c.f1 > ev_r.f1 and untouched and dt < 300)
    criterion(10, ok, f"{len(tasks)} instances, Conflict-B flipped {flipped}/{len(conflict_b)}, accuracy "
                      f"{ev_r.accuracy:.3f} -> {ev_c.accuracy:.3f}, F1 {ev_r.f1:.3f} -> {ev_c.f1:.3f}, "
                      f"agreement untouched: {untouched}, {dt:.1f}s")
    assert ok


# Pinned on the first run of the fixed-seed suite below (trained_model(0), 50 probes, K=4).
PINNED = {
    ("vis", "Top"): 0.20591804592939641,
    ("vis", "Random"): 0.9103071638727271,
    ("txt", "Top"): 0.9832005928237902,
    ("txt", "Random"): 0.9849785814955615,
}


def test_11_exact_validation_protocol(criterion):
    model = trained_model(0)
    tasks = generate_tasks(TaskSpec(background_max=2), 50, 3)
    rep = exact_validation(model, tasks, SampleSpec(50, 4, 0))
    keys = {(r["route"], r["subset"]) for r in rep.rows}
    structure = keys == {(r, s) for r in ("vis", "txt", "both") for s in SUBSETS} and all(
        "sign_agreement" in rep.row(route=r, subset=s) for r in ("vis", "txt") for s in SUBSETS)
    pearson = {(r, s): rep.row(route=r, subset=s)["pearson"] for r in ("vis", "txt") for s in ("Top", "Random")}
    pinned = all(abs(pearson[k] - v) <= 1e-6 for k, v in PINNED.items())
    order = {r: pearson[(r, "Top")] >= pearson[(r, "Random")] for r in ("vis", "txt")}
    ok = structure and pinned and all(order.values())
    criterion(11, ok, f"structure {structure}, pins {pinned}, Top>=Random pearson: "
                      f"vis {pearson[('vis', 'Top')]:.3f} vs {pearson[('vis', 'Random')]:.3f} ({order['vis']}), "
                      f"txt {pearson[('txt', 'Top')]:.3f} vs {pearson[('txt', 'Random')]:.3f} ({order['txt']})")
    assert structure and pinned
    assert all(order.values()), "Top-subset correlation below Random-subset correlation"


def test_12_timing_breakdown(criterion):
    model, tasks = planted_suite(1)
    table = timing_breakdown(model, tasks[0], SchedulePolicy(), steps=30)
    blocks = tuple(r["block"] for r in table.rows()) == BLOCKS
    total = sum(table.share.values())
    ok = blocks and abs(total - 100) <= 0.1 and table.estimator_share < 50
    criterion(12, ok, f"blocks {list(BLOCKS)}, shares sum {total:.3f}%, grad+CRE+gate {table.estimator_share:.1f}%")
    assert ok
