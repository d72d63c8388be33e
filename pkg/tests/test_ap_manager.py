from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disac_track import presets
from disac_track.ap_manager import ActiveSet, ManagementPolicy, gate_measurements, select_active
from disac_track.geometry import APState, FoV, rotation_from_ypr
from disac_track.measurement import RangeBearingSet
from disac_track.phd import UEState
from disac_track.pipeline import TrackerConfig, run_tracker
from disac_track.scenario import deployment_of, generate_scenario

ROOM = presets.room(seed=0, steps=2).aps


def ue(x, y, z):
    return UEState(np.array([x, y, z], dtype=float))


def rbset(ap_id, path_ids, t=0):
    n = len(path_ids)
    return RangeBearingSet(t, np.full(n, ap_id, dtype=np.int64), np.asarray(path_ids, dtype=np.int64),
                           np.arange(1, n + 1) * 1e-8, np.full(n, 1.5), np.zeros(n), np.zeros((n, 3, 3)))


def test_policy_validation():
    with pytest.raises(ValueError):
        ManagementPolicy("nearest")
    with pytest.raises(ValueError):
        ManagementPolicy("fixed_subset")
    with pytest.raises(ValueError):
        ManagementPolicy("fov_aware", fallback="none")


def test_all_active_returns_every_ap():
    out = select_active([ue(7, 5, 1)], ROOM, ManagementPolicy("all_active"))
    assert out.ap_ids == frozenset(range(1, 9))


def test_fixed_subset():
    out = select_active([ue(7, 5, 1)], ROOM, ManagementPolicy("fixed_subset", frozenset({1, 7})))
    assert out.ap_ids == frozenset({1, 7}) and len(out) == 2
    with pytest.raises(ValueError):
        select_active([], ROOM, ManagementPolicy("fixed_subset", frozenset({42})))


def test_single_fov_membership():
    aps = [APState(k, [10.0 * k, 0, 0], np.eye(3), FoV("sector", 2.0, math.radians(60))) for k in (1, 2, 3)]
    out = select_active([ue(31, 0, 0)], aps, ManagementPolicy("fov_aware"), time_step=4)
    assert out.ap_ids == frozenset({3}) and out.time_step == 4 and not out.fallback


def test_overlap_gives_union():
    aps = presets.corridor(seed=0, steps=2).aps
    out = select_active([ue(7, 0, 1.5)], aps, ManagementPolicy("fov_aware"))
    assert out.ap_ids == frozenset({1, 7})


def test_union_over_ues():
    aps = presets.corridor(seed=0, steps=2).aps
    out = select_active([ue(1, 0, 1.5), ue(13, 0, 1.5)], aps, ManagementPolicy("fov_aware"))
    assert out.ap_ids == frozenset({1, 7})


def test_empty_fallbacks():
    aps = presets.corridor(seed=0, steps=2).aps
    far = [ue(100, 100, 0)]
    prev = ActiveSet(3, frozenset({7}))
    keep = select_active(far, aps, ManagementPolicy("fov_aware"), 4, prev)
    assert keep.ap_ids == frozenset({7}) and keep.fallback
    first = select_active(far, aps, ManagementPolicy("fov_aware"), 0, None)
    assert first.ap_ids == frozenset({1, 7}) and first.fallback
    every = select_active(far, aps, ManagementPolicy("fov_aware", fallback="all_active"), 4, prev)
    assert every.ap_ids == frozenset({1, 7}) and every.fallback


@given(st.floats(0, 14), st.floats(0, 10), st.floats(0, 3), st.floats(1.0, 3.0), st.floats(1.0, 3.0))
def test_fov_aware_monotone_in_fov_size(x, y, z, grow_d, grow_theta):
    small = [APState(a.id, a.position, a.orientation, FoV("sector", 4.0, math.radians(30))) for a in ROOM]
    big = [APState(a.id, a.position, a.orientation,
                   FoV("sector", 4.0 * grow_d, min(math.pi, math.radians(30) * grow_theta))) for a in ROOM]
    p = [ue(x, y, z)]
    s = select_active(p, small, ManagementPolicy("fov_aware"))
    b = select_active(p, big, ManagementPolicy("fov_aware"))
    if not s.fallback:
        assert s.ap_ids <= b.ap_ids


def test_gate_measurements_examples():
    per_ap = {k: rbset(k, [1, 0]) for k in range(1, 9)}
    assert len(gate_measurements(per_ap, ActiveSet(0, frozenset()))) == 0
    assert len(gate_measurements(per_ap, ActiveSet(0, frozenset(range(1, 9))))) == 16
    out = gate_measurements(per_ap, ActiveSet(0, frozenset({7, 1})))
    assert list(zip(out.ap_id.tolist(), out.path_id.tolist())) == [(1, 0), (1, 1), (7, 0), (7, 1)]


def test_gate_measurements_missing_or_empty_ap():
    per_ap = {1: rbset(1, [0]), 2: RangeBearingSet.empty(0)}
    out = gate_measurements(per_ap, [1, 2, 3], time_step=5)
    assert len(out) == 1 and out.time_step == 5


def test_all_active_matches_no_manager_bitwise():
    cfg = presets.room(seed=4, steps=60)
    trajs, steps = generate_scenario(cfg)
    dep = deployment_of(cfg)
    a = run_tracker(dep, steps, cfg.ue_inits, TrackerConfig(policy=ManagementPolicy("all_active")))
    b = run_tracker(dep, steps, cfg.ue_inits, TrackerConfig(policy=None))
    for ea, eb in zip(a.estimates, b.estimates):
        assert ea[0].position.tobytes() == eb[0].position.tobytes()


def test_handover_is_function_of_predictions():
    aps = presets.corridor(seed=0, steps=2).aps
    preds = [[ue(x, 0.5, 1.0)] for x in np.linspace(1, 13, 40)]
    seq1 = [select_active(p, aps, ManagementPolicy("fov_aware"), t).ap_ids for t, p in enumerate(preds)]
    seq2 = [select_active(p, aps, ManagementPolicy("fov_aware"), t).ap_ids for t, p in enumerate(preds)]
    assert seq1 == seq2
    assert seq1[0] == frozenset({1}) and seq1[-1] == frozenset({7})
    assert frozenset({1, 7}) in seq1


def test_rotated_panel_selection():
    ap = APState(5, [0, 0, 0], rotation_from_ypr(math.pi / 2, 0, 0), FoV("sector", 5.0, math.radians(20)))
    assert select_active([ue(0, 3, 0)], [ap], ManagementPolicy("fov_aware")).ap_ids == frozenset({5})
    assert select_active([ue(3, 0, 0)], [ap], ManagementPolicy("fov_aware")).fallback
