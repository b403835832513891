import numpy as np
import pytest

from crglab.errors import ConfigError, InputError
from crglab.harness.suites import random_case
from crglab.harness.tasks import TaskSpec, make_instance
from crglab.model import (
    GateTable, ModalityLayout, ModelConfig, TokenLogProb, YesNoMargin, forward, forward_ungated,
    init_random, mha_route_split, objective, objective_from_dict,
)
from crglab.model.io import from_bytes, load, save, to_bytes
from crglab.model.planted import PlantedSpec, init_planted
from crglab.cre import exact_effects


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(model_dim=15)
    with pytest.raises(ConfigError):
        ModelConfig(yes_token=1, no_token=1)
    with pytest.raises(ConfigError):
        ModelConfig(vocab=3)
    cfg = ModelConfig(seed=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_layout_masks_and_extend():
    lay = ModalityLayout.prefix(3, 6)
    assert lay.visual_indices == [0, 1, 2] and lay.text_indices == [3, 4, 5]
    s_vis, s_txt = lay.selection_matrices()
    assert np.array_equal(s_vis + s_txt, np.eye(6))
    ext = lay.extend(2)
    assert ext.total_len == 8 and ext.visual_indices == [0, 1, 2]
    assert ModalityLayout.from_dict(lay.to_dict()) == lay
    with pytest.raises(InputError):
        ModalityLayout(3, [5])


def test_gate_table_rules():
    g = GateTable.ones(2, 3)
    assert g.is_identity()
    h = g.with_gate(1, 2, txt=0.25)
    assert h.txt[1, 2] == 0.25 and g.is_identity()
    with pytest.raises(InputError):
        g.with_gate(0, 0, vis=-1.0)
    with pytest.raises(InputError):
        GateTable(np.ones((2, 2)), np.ones((2, 3)))
    assert g.patch({(0, 1): 0.5}).txt[0, 1] == 0.5


def test_init_is_deterministic():
    a = init_random(ModelConfig(seed=7))
    b = init_random(ModelConfig(seed=7))
    assert all(np.array_equal(a[k], b[k]) for k in a.params)
    c = init_random(ModelConfig(seed=8))
    assert not np.array_equal(a["embed"], c["embed"])


def test_params_are_read_only():
    m = init_random(ModelConfig())
    with pytest.raises(ValueError):
        m["embed"][0, 0] = 1.0


def test_route_split_is_exact_and_matches_ungated_forward():
    for seed in range(10):
        c = random_case(seed)
        logits, cache = forward(c.model, c.tokens, c.layout)
        for hr in cache.heads.values():
            full = hr.alpha @ hr.v
            assert np.abs(full - (hr.o_vis + hr.o_txt)).max() <= 1e-12
            assert np.abs(hr.alpha.sum(axis=1) - 1).max() <= 1e-12
        assert np.abs(logits - forward_ungated(c.model, c.tokens)).max() <= 1e-12
        for l, lt in enumerate(cache.layers):
            y_vis, y_txt = mha_route_split(c.model, cache, l)
            assert np.abs(y_vis + y_txt - lt.y_attn).max() <= 1e-12


def test_no_visual_tokens_means_zero_visual_route(rcase):
    lay = ModalityLayout(len(rcase.tokens))
    _, cache = forward(rcase.model, rcase.tokens, lay)
    assert all((hr.o_vis == 0).all() for hr in cache.heads.values())


def test_forward_input_errors(rcase):
    with pytest.raises(InputError):
        forward(rcase.model, [99], ModalityLayout(1))
    with pytest.raises(InputError):
        forward(rcase.model, rcase.tokens, ModalityLayout(3))
    with pytest.raises(InputError):
        forward(rcase.model, rcase.tokens, rcase.layout, GateTable.ones(1, 1))


def test_forward_deterministic(rcase):
    a, _ = forward(rcase.model, rcase.tokens, rcase.layout)
    b, _ = forward(rcase.model, rcase.tokens, rcase.layout)
    assert a.tobytes() == b.tobytes()


def test_objectives():
    z = np.array([2.0, 0.5, -1.0, 0.0])
    assert objective(z, YesNoMargin(0, 1)) == 1.5
    lp = objective(z, TokenLogProb(2))
    assert lp == pytest.approx(-1.0 - np.log(np.exp(z).sum()), rel=1e-14)
    assert objective_from_dict(YesNoMargin(0, 1).to_dict()) == YesNoMargin(0, 1)
    with pytest.raises(InputError):
        objective(z, TokenLogProb(9))


def test_io_round_trip_byte_exact(tmp_path):
    m = init_random(ModelConfig(seed=11))
    path = tmp_path / "m.bin"
    save(m, path)
    raw = path.read_bytes()
    m2 = load(path)
    assert m2.config == m.config
    assert all(m2[k].tobytes() == m[k].tobytes() for k in m.params)
    assert to_bytes(m2) == raw
    assert int.from_bytes(raw[:8], "little") > 0


def test_io_rejects_garbage():
    with pytest.raises(InputError):
        from_bytes(b"\x00" * 4)
    m = init_random(ModelConfig())
    with pytest.raises(InputError):
        from_bytes(to_bytes(m)[:-8])


def test_planted_regimes():
    spec = PlantedSpec()
    m = init_planted(spec)
    ts = TaskSpec()
    kind = YesNoMargin(0, 1)
    # image No, cue Yes: the txt-prior head is Conflict-B and the answer is wrong
    t = make_instance(ts, 0, image_yes=False, cue_yes=True)
    eff = {e.key: e for e in exact_effects(m, t.tokens, t.layout, kind)}
    assert eff[(0, 1)].d_vis < 0 < eff[(0, 1)].d_txt
    assert eff[(0, 0)].d_vis < 0 and eff[(0, 0)].d_txt == 0.0
    assert objective(forward(m, t.tokens, t.layout)[0], kind) > 0
    # image Yes, cue No: Conflict-A
    t = make_instance(ts, 1, image_yes=True, cue_yes=False)
    eff = {e.key: e for e in exact_effects(m, t.tokens, t.layout, kind)}
    assert eff[(0, 1)].d_vis > 0 > eff[(0, 1)].d_txt
    assert objective(forward(m, t.tokens, t.layout)[0], kind) < 0


def test_planted_spec_errors():
    with pytest.raises(ConfigError):
        init_planted(PlantedSpec(vis_copy=(0,), txt_prior=(0,)))
    with pytest.raises(ConfigError):
        init_planted(PlantedSpec(heads=1, head_dim=16, vis_copy=(0,), txt_prior=(1,)))
    assert PlantedSpec.from_dict(PlantedSpec().to_dict()) == PlantedSpec()
