from __future__ import annotations

import math

import numpy as np
import pytest

from disac_track import presets
from disac_track.geometry import APState, FoV, fov_contains, rotation_from_ypr
from disac_track.measurement import SPEED_OF_LIGHT, RangeBearingSet, transform_set
from disac_track.phd import MotionModel
from disac_track.scenario import (
    Deployment,
    ScenarioConfig,
    TraceError,
    UEInit,
    deployment_of,
    generate_measurements,
    generate_scenario,
    generate_trajectory,
    load_trace,
    read_measurements,
    save_trace,
)


def simple_cfg(T=5, p_d=1.0, clutter=0.0, noise=None, motion=None, aps=None, ue=(2.0, 1.0, 1.0), vel=(0, 0, 0),
               seed=3, **kw):
    aps = aps if aps is not None else [APState(1, [0, 0, 1], np.eye(3), FoV("sector", 20.0, math.radians(80)))]
    return ScenarioConfig(
        seed=seed, T=T, aps=aps, ue_inits=[UEInit(1, np.array(ue), np.array(vel, dtype=float))],
        motion=motion or MotionModel("random_walk", np.zeros((3, 3))), p_d=p_d, clutter_per_ap=clutter,
        clutter_region=np.array([[0, 10], [-5, 5], [0, 3]]), noise=np.zeros((3, 3)) if noise is None else noise, **kw)


# --- config ------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        simple_cfg(p_d=1.5)
    with pytest.raises(ValueError):
        simple_cfg(clutter=-1)
    with pytest.raises(ValueError):
        ScenarioConfig(seed=0, T=1, aps=[], ue_inits=[], clutter_region=np.array([[0, 0], [0, 1], [0, 1]]))
    dup = [APState(1, [0, 0, 0]), APState(1, [1, 0, 0])]
    with pytest.raises(ValueError):
        simple_cfg(aps=dup)
    with pytest.raises(ValueError):
        simple_cfg(noise=np.diag([1.0, -1.0, 1.0]))


# --- trajectories ------------------------------------------------------------


def test_static_random_walk():
    traj = generate_trajectory(simple_cfg(T=20), 1)
    assert len(traj) == 20
    assert np.all(traj.positions == [2.0, 1.0, 1.0])


def test_constant_velocity_noiseless():
    cfg = simple_cfg(T=4, ue=(0, 0, 0), vel=(1, 0, 0), motion=MotionModel("constant_velocity", np.zeros((6, 6))))
    traj = generate_trajectory(cfg, 1)
    np.testing.assert_array_equal(traj.positions, [[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    np.testing.assert_array_equal(traj.velocities[-1], [1, 0, 0])


def test_random_walk_increment_variance():
    cfg = simple_cfg(T=10_000, motion=MotionModel("random_walk", 0.01 * np.eye(3)))
    inc = np.diff(generate_trajectory(cfg, 1).positions, axis=0)
    np.testing.assert_allclose(inc.var(axis=0, ddof=1), 0.01, rtol=0.05)


def test_unknown_ue():
    with pytest.raises(KeyError):
        generate_trajectory(simple_cfg(), 9)


# --- measurements ------------------------------------------------------------


def test_noiseless_round_trip_every_ap():
    aps = [APState(k, [5 * math.cos(k), 5 * math.sin(k), 2.0], rotation_from_ypr(k + math.pi, 0.1, 0.0),
                   FoV("all")) for k in range(1, 6)]
    cfg = simple_cfg(T=3, aps=aps)
    trajs, steps = generate_scenario(cfg)
    for t, step in enumerate(steps):
        assert step.total() == 5
        rb = RangeBearingSet.concat(t, [step.per_ap[k] for k in sorted(step.per_ap)])
        z = transform_set(rb, cfg.ap_map, cfg.c).z
        np.testing.assert_allclose(z, np.repeat(trajs[0].positions[t][None], 5, axis=0), atol=1e-9)


def test_no_detection_no_clutter_is_empty():
    _, steps = generate_scenario(simple_cfg(p_d=0.0))
    assert all(s.total() == 0 for s in steps)
    assert all(set(s.per_ap) == {1} for s in steps)


def test_detection_and_clutter_rates():
    cfg = simple_cfg(T=10_000, p_d=0.8, clutter=2.0)
    trajs, steps = generate_scenario(cfg)
    ap = cfg.aps[0]
    truth = trajs[0].positions[0]
    los = clutter = 0
    for step in steps:
        s = step.per_ap[1]
        rb = RangeBearingSet.concat(step.time_step, [s])
        z = transform_set(rb, cfg.ap_map, cfg.c).z if len(s) else np.zeros((0, 3))
        hit = np.linalg.norm(z - truth, axis=1) < 1e-6
        los += int(hit.sum())
        clutter += int((~hit).sum())
    assert fov_contains(ap, truth)
    assert abs(los / cfg.T - 0.8) <= 0.01
    assert abs(clutter / cfg.T - 2.0) <= 0.05


def test_no_los_outside_fov():
    ap = APState(1, [0, 0, 1], np.eye(3), FoV("sector", 3.0, math.radians(30)))
    _, steps = generate_scenario(simple_cfg(aps=[ap], ue=(-4.0, 0.0, 1.0)))
    assert all(s.total() == 0 for s in steps)


def test_collocated_ue_skipped():
    ap = APState(1, [2.0, 1.0, 1.0], np.eye(3), FoV("all"))
    _, steps = generate_scenario(simple_cfg(aps=[ap]))
    assert all(s.total() == 0 for s in steps)


def test_visibility_region_overrides_fov():
    ap = APState(1, [0, 0, 1], np.eye(3), FoV("sector", 1.0, math.radians(10)))
    cfg = simple_cfg(aps=[ap], visibility={1: FoV("sphere", 30.0)})
    _, steps = generate_scenario(cfg)
    assert all(s.total() == 1 for s in steps)


def test_measurement_fields():
    noise = presets.noise_template()
    cfg = simple_cfg(T=2, noise=noise, clutter=3.0)
    s = generate_measurements(cfg, [generate_trajectory(cfg, 1)], 1).per_ap[1]
    assert np.all(s.delay >= 0)
    assert np.all(np.diff(s.delay) >= 0)
    np.testing.assert_array_equal(s.path_id, np.arange(len(s)))
    assert np.all((s.elevation >= 0) & (s.elevation <= math.pi))
    assert np.all((s.azimuth >= -math.pi) & (s.azimuth < math.pi))
    assert np.all(s.cov == noise)
    with pytest.raises(IndexError):
        generate_measurements(cfg, [], 5)


def test_seed_determinism_and_stream_split():
    noise = presets.noise_template()
    a = generate_scenario(simple_cfg(T=20, p_d=0.9, clutter=4.0, noise=noise))[1]
    b = generate_scenario(simple_cfg(T=20, p_d=0.9, clutter=4.0, noise=noise))[1]
    for sa, sb in zip(a, b):
        x, y = sa.per_ap[1], sb.per_ap[1]
        assert x.delay.tobytes() == y.delay.tobytes() and x.azimuth.tobytes() == y.azimuth.tobytes()
    # switching clutter off leaves the LoS draws untouched
    c = generate_scenario(simple_cfg(T=20, p_d=0.9, clutter=0.0, noise=noise))[1]
    for sa, sc in zip(a, c):
        for d in sc.per_ap[1].delay:
            assert d in sa.per_ap[1].delay
    other = generate_scenario(simple_cfg(T=20, p_d=0.9, clutter=4.0, noise=noise, seed=4))[1]
    assert any(len(x.per_ap[1]) != len(y.per_ap[1]) or np.any(x.per_ap[1].delay != y.per_ap[1].delay)
               for x, y in zip(a, other))


# --- trace files -------------------------------------------------------------


def _assert_steps_equal(a, b):
    assert len(a) == len(b)
    for sa, sb in zip(a, b):
        assert sa.time_step == sb.time_step and set(sa.per_ap) == set(sb.per_ap)
        for k in sa.per_ap:
            x, y = sa.per_ap[k], sb.per_ap[k]
            for f in ("ap_id", "path_id", "delay", "elevation", "azimuth", "cov"):
                assert getattr(x, f).tobytes() == getattr(y, f).tobytes(), f


def test_trace_round_trip(tmp_path):
    cfg = presets.room(seed=2, steps=3)
    trajs, steps = generate_scenario(cfg)
    save_trace(tmp_path, deployment_of(cfg), steps, trajs)
    tr = load_trace(tmp_path)
    _assert_steps_equal(steps, tr.steps)
    assert tr.truth[0].positions.tobytes() == trajs[0].positions.tobytes()
    for a, b in zip(cfg.aps, tr.deployment.aps):
        assert a.id == b.id and a.fov == b.fov
        assert a.position.tobytes() == b.position.tobytes()
        assert a.orientation.tobytes() == b.orientation.tobytes()
    assert tr.deployment.c == cfg.c
    np.testing.assert_array_equal(tr.deployment.clutter_region, cfg.clutter_region)


def test_empty_trace_round_trip(tmp_path):
    dep = Deployment([APState(1, [0, 0, 0])], SPEED_OF_LIGHT, None)
    save_trace(tmp_path, dep, [])
    tr = load_trace(tmp_path)
    assert tr.steps == [] and tr.truth is None
    assert [a.id for a in tr.deployment.aps] == [1]


def test_trailing_empty_steps_preserved(tmp_path):
    cfg = simple_cfg(T=4, p_d=0.0)
    trajs, steps = generate_scenario(cfg)
    save_trace(tmp_path, deployment_of(cfg), steps, trajs)
    assert len(load_trace(tmp_path).steps) == 4


HEADER = "time_step,ap_id,path_id,delay_s,elevation_rad,azimuth_rad,c00,c01,c02,c11,c12,c22\n"


def _dep():
    return Deployment([APState(1, [0, 0, 0]), APState(2, [1, 0, 0])], SPEED_OF_LIGHT, None, 2)


def test_hand_written_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "0,2,0,1e-8,1.5,0.25,1e-20,0,0,1e-4,0,1e-4\n1,1,3,2e-8,1.0,-0.5,1e-20,0,0,4e-4,1e-5,4e-4\n")
    steps = read_measurements(p, _dep())
    assert len(steps) == 2
    s = steps[0].per_ap[2]
    assert len(s) == 1 and s.delay[0] == 1e-8 and s.azimuth[0] == 0.25 and s.elevation[0] == 1.5
    assert len(steps[0].per_ap[1]) == 0
    t = steps[1].per_ap[1]
    assert t.path_id[0] == 3
    assert t.cov[0][1, 2] == 1e-5 and t.cov[0][2, 1] == 1e-5


@pytest.mark.parametrize(
    "body, where",
    [
        ("0,1,0,abc,1.5,0.25,0,0,0,0,0,0\n", "row 2, column 'delay_s'"),
        ("0,1,0,1e-8,1.5,0.25,0,0,0,0,0,0\nx,1,0,1e-8,1.5,0.25,0,0,0,0,0,0\n", "row 3, column 'time_step'"),
        ("0,9,0,1e-8,1.5,0.25,0,0,0,0,0,0\n", "row 2, column 'ap_id'"),
        ("0,1,0,-1e-8,1.5,0.25,0,0,0,0,0,0\n", "row 2, column 'delay_s'"),
        ("0,1,0,1e-8,1.5\n", "row 2, column 'azimuth_rad'"),
        ("-1,1,0,1e-8,1.5,0.25,0,0,0,0,0,0\n", "row 2, column 'time_step'"),
    ],
)
def test_parse_errors_name_row_and_column(tmp_path, body, where):
    p = tmp_path / "m.csv"
    p.write_text(HEADER + body)
    with pytest.raises(TraceError, match=where.replace("(", r"\(")):
        read_measurements(p, _dep())


def test_bad_header(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("time,ap\n")
    with pytest.raises(TraceError, match="row 1"):
        read_measurements(p, _dep())


def test_missing_and_bad_deployment(tmp_path):
    with pytest.raises(TraceError, match="missing"):
        load_trace(tmp_path)
    (tmp_path / "deployment.json").write_text("{not json")
    with pytest.raises(TraceError):
        load_trace(tmp_path)
    (tmp_path / "deployment.json").write_text('{"aps": [{"id": 1, "position": [0, 0]}]}')
    with pytest.raises(TraceError, match=r"aps\[0\]"):
        load_trace(tmp_path)


def test_truth_gaps_rejected(tmp_path):
    cfg = simple_cfg(T=3)
    trajs, steps = generate_scenario(cfg)
    save_trace(tmp_path, deployment_of(cfg), steps, trajs)
    lines = (tmp_path / "truth.csv").read_text().splitlines()
    (tmp_path / "truth.csv").write_text("\n".join([lines[0], lines[1], lines[3]]) + "\n")
    with pytest.raises(TraceError, match="UE 1"):
        load_trace(tmp_path)
