import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crglab.cre import EXACT, RouteEffect, VriScore
from crglab.errors import ConfigError
from crglab.gating import (
    ConflictClass, SchedulePolicy, StepTimer, apply_crg_step, classify, classify_pair, conflict_sets,
    crg_step, plan_gates, schedule, schedule_values, select,
)
from crglab.harness.tasks import TaskSpec, make_instance
from crglab.model import YesNoMargin, forward, objective
from crglab.model.planted import init_planted

KIND = YesNoMargin(0, 1)


def test_classify_examples():
    assert classify_pair(2, -1) is ConflictClass.CONFLICT_A
    assert classify_pair(-2, 1) is ConflictClass.CONFLICT_B
    assert classify_pair(0, 1) is ConflictClass.NULL
    assert classify_pair(1, 0.0) is ConflictClass.NULL
    assert classify_pair(1, 1) is ConflictClass.AGREEMENT_POS
    assert classify_pair(-1, -1) is ConflictClass.AGREEMENT_NEG
    eff = [RouteEffect(0, 0, 2, -1, EXACT), RouteEffect(0, 1, -2, 1, EXACT), RouteEffect(1, 0, 1, 1, EXACT)]
    h_a, h_b = conflict_sets(classify(eff))
    assert h_a == [(0, 0)] and h_b == [(0, 1)]


def _scores(vals):
    return [VriScore(0, i, v) for i, v in enumerate(vals)]


def test_select_examples():
    heads = [(0, 0), (0, 1), (0, 2)]
    assert select(heads, _scores([0.9, 0.1, 0.5]), 2) == [(0, 1), (0, 2)]
    assert select(heads, _scores([0.9, 0.1, 0.5]), 10) == [(0, 1), (0, 2), (0, 0)]
    assert select(heads, _scores([0.9, 0.1, 0.5]), 0) == []
    tied = [VriScore(1, 0, 0.3), VriScore(0, 2, 0.3), VriScore(0, 1, 0.3)]
    assert select([(1, 0), (0, 2), (0, 1)], tied, 2) == [(0, 1), (0, 2)]


def test_schedule_examples():
    assert schedule_values(1, (0.0, 0.5), 0.5, 1e-3) == [0.0]
    got = schedule_values(3, (0.0, 0.5), 1.0, 1e-3)
    assert np.allclose(got, [0.0005, 0.25, 0.4995], atol=1e-15, rtol=0)
    patch = schedule([(0, 1), (1, 0)], (0.5, 1.0), 0.5, 1e-3)
    assert patch[(0, 1)] < patch[(1, 0)]
    assert schedule([], (0, 0.5), 0.5, 1e-3) == {}


def test_schedule_gamma_concavity():
    lo = schedule_values(5, (0, 1), 0.5, 1e-3)
    hi = schedule_values(5, (0, 1), 2.0, 1e-3)
    assert all(a >= b for a, b in zip(lo[1:-1], hi[1:-1]))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 30), gamma=st.floats(0.05, 4.0), lo=st.floats(0, 1), width=st.floats(0, 1),
       eps=st.floats(1e-6, 0.49))
def test_schedule_monotone_and_in_range(n, gamma, lo, width, eps):
    hi = min(1.0, lo + width)
    vals = schedule_values(n, (lo, hi), gamma, eps)
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    span = hi - lo
    tol = 1e-12
    assert all(lo + span * eps - tol <= v <= lo + span * (1 - eps) + tol for v in vals)


def test_policy_validation_and_json():
    with pytest.raises(ConfigError):
        SchedulePolicy(gamma=0)
    with pytest.raises(ConfigError):
        SchedulePolicy(range_b=(0.6, 0.5))
    with pytest.raises(ConfigError):
        SchedulePolicy(layer_start=3, layer_end=1)
    with pytest.raises(ConfigError):
        SchedulePolicy(topk_scope="both")
    p = SchedulePolicy(k=3, layer_start=0, layer_end=1, topk_scope="per-layer")
    d = json.loads(p.to_json())
    assert set(d) == {"k", "gamma", "clip_eps", "layer_start", "layer_end", "topk_scope", "ranges", "epsilon"}
    assert SchedulePolicy.from_dict(d) == p


def test_plan_gates_disciplines():
    eff = [
        RouteEffect(0, 0, 2, -1, EXACT), RouteEffect(0, 1, 1, -3, EXACT), RouteEffect(0, 2, -1, 4, EXACT),
        RouteEffect(1, 0, 1, 1, EXACT), RouteEffect(1, 1, 0, 2, EXACT), RouteEffect(1, 2, -3, 1, EXACT),
    ]
    gates, rec = plan_gates(eff, SchedulePolicy(), 2, 3)
    assert (gates.vis == 1).all()
    assert gates.txt[1, 0] == 1 and gates.txt[1, 1] == 1
    for h in rec["selected"]["A"]:
        assert 0.5 <= gates.txt[h] <= 1.0
    for h in rec["selected"]["B"]:
        assert 0.0 <= gates.txt[h] <= 0.5
    # B: (0,2) vri 0.2, (1,2) vri 0.75 -> ascending rank gives increasing gates
    assert rec["selected"]["B"] == [(0, 2), (1, 2)]
    assert gates.txt[0, 2] < gates.txt[1, 2]
    windowed, rec = plan_gates(eff, SchedulePolicy(layer_start=1, layer_end=1), 2, 3)
    assert windowed.txt[0].tolist() == [1, 1, 1]
    per_layer, rec = plan_gates(eff, SchedulePolicy(k=1, topk_scope="per-layer"), 2, 3)
    assert rec["selected"]["B"] == [(0, 2), (1, 2)]
    single, _ = plan_gates(eff, SchedulePolicy(k=1), 2, 3)
    assert single.txt[0, 2] == 0.0


def test_k0_is_bitwise_regular_decoding():
    m = init_planted()
    t = make_instance(TaskSpec(), 0, image_yes=False, cue_yes=True)
    gates, logits = apply_crg_step(m, t.tokens, t.layout, KIND, SchedulePolicy(k=0))
    assert gates.is_identity()
    assert logits.tobytes() == forward(m, t.tokens, t.layout)[0].tobytes()


def test_planted_conflict_b_margin_drops():
    m = init_planted()
    t = make_instance(TaskSpec(), 0, image_yes=False, cue_yes=True)
    step = crg_step(m, t.tokens, t.layout, KIND, SchedulePolicy(), StepTimer())
    assert objective(step.logits, KIND) < objective(step.base_logits, KIND)
    assert objective(step.logits, KIND) < 0
    assert step.record["selected"]["B"] == [(0, 1)]


def test_empty_conflict_sets_no_op():
    m = init_planted()
    t = make_instance(TaskSpec(), 0, image_yes=True, cue_yes=True)
    step = crg_step(m, t.tokens, t.layout, KIND, SchedulePolicy())
    assert step.gates.is_identity()
    assert step.logits.tobytes() == step.base_logits.tobytes()


def test_step_timer_blocks():
    m = init_planted()
    t = make_instance(TaskSpec(), 0, image_yes=False, cue_yes=True)
    timer = StepTimer()
    crg_step(m, t.tokens, t.layout, KIND, SchedulePolicy(), timer)
    assert set(timer.blocks) == {"base_forward", "grad", "compute_CRE", "gate_compute", "gated_forward"}
