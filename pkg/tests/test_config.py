from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest

from disac_track import presets
from disac_track.config import ConfigError, RunConfig, load_config, parse_config, parse_scenario, parse_tracker

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def base(**over):
    d = {"seed": 1, "scenario": {"preset": "room", "steps": 10}}
    d.update(over)
    return d


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert isinstance(cfg, RunConfig)


def test_preset_matches_library():
    cfg = parse_config(base())
    ref = presets.room(seed=1, steps=10)
    assert cfg.scenario.T == 10 and len(cfg.scenario.aps) == 8
    assert all(np.array_equal(a.orientation, b.orientation) for a, b in zip(cfg.scenario.aps, ref.aps))
    assert cfg.tracker.kind == "phd" and cfg.tracker.policy.kind == "fov_aware"
    assert cfg.tracker.clutter_per_ap == ref.clutter_per_ap


def test_inline_corridor_equals_preset():
    inline = load_config(CONFIGS / "corridor.toml").scenario
    ref = presets.corridor(seed=3)
    assert inline.T == ref.T and inline.p_d == ref.p_d and inline.clutter_per_ap == ref.clutter_per_ap
    np.testing.assert_allclose(inline.noise, ref.noise, rtol=1e-12)
    np.testing.assert_allclose(inline.clutter_region, ref.clutter_region)
    for a, b in zip(inline.aps, ref.aps):
        assert a.id == b.id and a.fov == b.fov
        np.testing.assert_allclose(a.orientation, b.orientation, atol=1e-15)
    assert inline.visibility == ref.visibility
    np.testing.assert_allclose(inline.ue_inits[0].velocity, ref.ue_inits[0].velocity)


def test_tracker_fields():
    t = parse_tracker({"kind": "kf_nn", "policy": "fixed_subset", "fixed_ids": [1, 7], "nn_gate": 2.0,
                       "motion": {"kind": "constant_velocity", "q_diag": [1, 1, 1, 2, 2, 2]}})
    assert t.kind == "kf_nn" and t.policy.fixed_ids == frozenset({1, 7}) and t.nn_gate == 2.0
    assert t.motion.dim == 6 and t.motion.Q[5, 5] == 2
    assert parse_tracker({"policy": "none"}).policy is None
    assert parse_tracker({}).motion.Q[0, 0] == 0.01
    assert parse_config(base(tracker="kf_nn")).tracker.kind == "kf_nn"


def test_seed_override():
    cfg = parse_config(base()).with_seed(99)
    assert cfg.seed == 99 and cfg.scenario.seed == 99


def test_fov_degrees():
    s = parse_scenario({"steps": 2, "clutter_region": [[0, 1], [0, 1], [0, 1]],
                        "aps": [{"id": 0, "position": [0, 0, 0], "fov": {"d_th": 3, "theta_th_deg": 45}}],
                        "ue": [{"id": 0, "position": [1, 0, 0]}]}, 0)
    assert s.aps[0].fov.theta_th == pytest.approx(math.pi / 4)


@pytest.mark.parametrize(
    "doc, field",
    [
        ({"seed": 1}, "scenario"),
        (base(trace="x"), "scenario"),
        (base(seed=-1), "seed"),
        (base(seed=2**64), "seed"),
        (base(seed="one"), "seed"),
        (base(bogus=1), "bogus"),
        (base(name=""), "name"),
        (base(scenario={"preset": "mall"}), "scenario.preset"),
        (base(scenario={"preset": "room", "p_d": 2}), "scenario.p_d"),
        (base(scenario={"preset": "room", "steps": 0}), "scenario.steps"),
        (base(scenario={"preset": "room", "steps": 1.5}), "scenario.steps"),
        (base(scenario={"preset": "room", "noise": {"range_std": -1}}), "scenario.noise.range_std"),
        (base(scenario={"preset": "room", "noise": {"cov": [[1, 0, 0], [0, -1, 0], [0, 0, 1]]}}), "scenario"),
        (base(scenario={"steps": 3, "aps": []}), "scenario.aps"),
        (base(scenario={"steps": 3, "clutter_region": [[0, 1], [0, 1], [0, 1]],
                        "aps": [{"id": 1, "position": [0, 0]}], "ue": [{"id": 1, "position": [1, 1, 1]}]}),
         "scenario.aps[0].position"),
        (base(scenario={"steps": 3, "clutter_region": [[0, 1], [0, 1], [1, 0]],
                        "aps": [{"id": 1, "position": [0, 0, 0]}], "ue": [{"id": 1, "position": [1, 1, 1]}]}),
         "scenario.clutter_region"),
        (base(scenario={"steps": 3, "clutter_region": [[0, 1], [0, 1], [0, 1]],
                        "aps": [{"id": 1, "position": [0, 0, 0], "fov": {"kind": "cone"}}],
                        "ue": [{"id": 1, "position": [1, 1, 1]}]}), "scenario.aps[0].fov.kind"),
        (base(scenario={"steps": 3, "clutter_region": [[0, 1], [0, 1], [0, 1]],
                        "aps": [{"id": 1, "position": [0, 0, 0]}], "ue": []}), "scenario.ue"),
        (base(tracker={"kind": "jpda"}), "tracker.kind"),
        (base(tracker={"policy": "fixed_subset"}), "tracker.fixed_ids"),
        (base(tracker={"prune_threshold": -1}), "tracker.prune_threshold"),
        (base(tracker={"renormalize": "yes"}), "tracker.renormalize"),
        (base(tracker={"motion": {"q_diag": [1, 1]}}), "tracker.motion.q_diag"),
        (base(tracker={"motion": {"q": [[1, 2, 0], [0, 1, 0], [0, 0, 1]]}}), "tracker.motion.q"),
        (base(tracker=3), "tracker"),
        (base(ue=[{"id": 1, "position": [0, 0, 0]}]), "ue"),
    ],
)
def test_errors_name_the_field(doc, field):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert info.value.path == field
    assert str(info.value).startswith(field + ":")


def test_load_json_and_relative_trace(tmp_path):
    p = tmp_path / "sub" / "c.json"
    p.parent.mkdir()
    p.write_text(json.dumps({"seed": 0, "trace": "../t"}))
    cfg = load_config(p)
    assert cfg.trace == p.parent / "../t"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = [\n")
    with pytest.raises(ConfigError, match="parse error"):
        load_config(bad)
