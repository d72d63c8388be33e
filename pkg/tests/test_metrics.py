from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from disac_track import presets
from disac_track.ap_manager import ActiveSet, ManagementPolicy
from disac_track.metrics import RunResult, active_ap_stats, error_cdf, region_mean, rms_trajectory_error, summarize
from disac_track.phd import UEState
from disac_track.pipeline import TrackerConfig, run_tracker
from disac_track.scenario import Trajectory, deployment_of, generate_scenario


def result_from(est: np.ndarray, truth: np.ndarray, counts=None) -> RunResult:
    """Single-UE result; ``est`` rows that are NaN become empty steps."""
    T = truth.shape[0]
    counts = counts if counts is not None else [1] * T
    estimates = [[] if np.isnan(e).any() else [UEState(e)] for e in est]
    active = [ActiveSet(t, frozenset(range(c))) for t, c in enumerate(counts)]
    return RunResult(estimates, active, [Trajectory(1, truth)])


def test_perfect_estimates():
    x = np.random.default_rng(0).normal(size=(20, 3))
    rep = rms_trajectory_error(result_from(x, x))
    assert np.all(rep.errors == 0) and rep.mean == 0 and rep.missed_steps == 0


def test_constant_offset():
    x = np.random.default_rng(1).normal(size=(15, 3))
    rep = rms_trajectory_error(result_from(x + [0.06, 0.0, 0.08], x))
    np.testing.assert_allclose(rep.errors, 0.1, rtol=1e-12)


def test_isotropic_error_mean():
    # the Euclidean norm of an isotropic 3D Gaussian error is Maxwell distributed:
    # mean 2*sigma*sqrt(2/pi), root-mean-square sigma*sqrt(3)
    sigma = 0.05
    r = np.random.default_rng(2)
    truth = r.normal(size=(10_000, 3))
    rep = rms_trajectory_error(result_from(truth + r.normal(scale=sigma, size=truth.shape), truth))
    assert abs(rep.mean / (2 * sigma * math.sqrt(2 / math.pi)) - 1) < 0.05
    rms = math.sqrt(np.mean(rep.errors**2))
    assert abs(rms / (sigma * math.sqrt(3)) - 1) < 0.05


def test_missing_steps_are_nan():
    x = np.zeros((4, 3))
    est = x.copy() + 1.0
    est[1] = np.nan
    rep = rms_trajectory_error(result_from(est, x))
    assert np.isnan(rep.errors[1]) and rep.missed_steps == 1
    np.testing.assert_allclose(rep.mean, math.sqrt(3))


def test_all_missing_gives_nan_mean():
    rep = rms_trajectory_error(result_from(np.full((3, 3), np.nan), np.zeros((3, 3))))
    assert math.isnan(rep.mean) and rep.missed_steps == 3


def test_multi_ue_greedy_matching():
    truth = [Trajectory(1, np.array([[0.0, 0, 0]])), Trajectory(2, np.array([[10.0, 0, 0]]))]
    est = [[UEState(np.array([10.3, 0, 0])), UEState(np.array([0.0, 0.4, 0]))]]
    rep = rms_trajectory_error(RunResult(est, [ActiveSet(0, frozenset())], truth))
    np.testing.assert_allclose(rep.errors, [math.sqrt((0.09 + 0.16) / 2)])
    too_many = [[UEState(np.zeros(3))] * 3]
    with pytest.raises(ValueError, match="more estimates"):
        rms_trajectory_error(RunResult(too_many, [ActiveSet(0, frozenset())], truth))


def test_result_validation():
    with pytest.raises(ValueError):
        RunResult([[]], [], None)
    with pytest.raises(ValueError):
        RunResult([[]], [ActiveSet(0, frozenset())], [Trajectory(1, np.zeros((2, 3)))])
    with pytest.raises(ValueError, match="ground truth"):
        rms_trajectory_error(RunResult([[]], [ActiveSet(0, frozenset())], None))


@given(st.integers(0, 2**32 - 1))
def test_rigid_invariance(seed):
    r = np.random.default_rng(seed)
    truth = r.normal(size=(10, 3))
    est = truth + r.normal(scale=0.1, size=truth.shape)
    Q, _ = np.linalg.qr(r.normal(size=(3, 3)))
    shift = r.normal(scale=10, size=3)
    a = rms_trajectory_error(result_from(est, truth)).errors
    b = rms_trajectory_error(result_from(est @ Q.T + shift, truth @ Q.T + shift)).errors
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_cdf_examples():
    assert error_cdf([0.3]) == [(0.3, 1.0)]
    assert [f for _, f in error_cdf([3, 1, 4, 2])] == [0.25, 0.5, 0.75, 1.0]
    assert [v for v, _ in error_cdf([3, 1, 4, 2])] == [1, 2, 3, 4]
    cdf = error_cdf([1.0, np.nan, 2.0])
    assert cdf == [(1.0, 0.5), (2.0, 1.0)]


def test_cdf_median_crossing():
    data = np.concatenate([-np.arange(1, 51), [0.0], np.arange(1, 51)])
    cdf = error_cdf(data)
    first = next(v for v, f in cdf if f >= 0.5)
    assert first == 0.0 == np.median(data)


def test_cdf_errors():
    with pytest.raises(ValueError):
        error_cdf([])
    with pytest.raises(ValueError):
        error_cdf([np.nan, np.nan])


@given(st.lists(st.floats(0, 1e3), min_size=1, max_size=50))
def test_cdf_monotone(values):
    cdf = error_cdf(values)
    v = [a for a, _ in cdf]
    f = [b for _, b in cdf]
    assert v == sorted(v) and f == sorted(f) and f[-1] == 1.0


def test_active_stats_examples():
    x = np.zeros((5, 3))
    counts, mean = active_ap_stats(result_from(x, x, [8] * 5))
    assert counts.tolist() == [8] * 5 and mean == 8.0
    counts, mean = active_ap_stats(result_from(x, x, [2, 2, 2, 2, 2]))
    assert mean == 2.0


def test_active_stats_crossing_run():
    cfg = presets.corridor(seed=0, steps=120)
    trajs, steps = generate_scenario(cfg)
    dep = deployment_of(cfg)
    fov = run_tracker(dep, steps, cfg.ue_inits, TrackerConfig(clutter_per_ap=0.5), trajs)
    every = run_tracker(dep, steps, cfg.ue_inits,
                        TrackerConfig(policy=ManagementPolicy("all_active"), clutter_per_ap=0.5), trajs)
    counts, mean = active_ap_stats(fov)
    assert counts.min() < mean < counts.max()
    assert mean < active_ap_stats(every)[1]


def test_summarize_and_region_mean():
    x = np.zeros((4, 3))
    est = x + [[0.1, 0, 0], [0.2, 0, 0], [0.3, 0, 0], [np.nan] * 3]
    s = summarize(result_from(est, x, [1, 2, 3, 2]))
    assert set(s) == {"mean_rmse_m", "p50", "p90", "p95", "mean_active_aps", "missed_steps"}
    np.testing.assert_allclose([s["mean_rmse_m"], s["p50"]], [0.2, 0.2])
    assert s["mean_active_aps"] == 2.0 and s["missed_steps"] == 1
    errors = np.array([1.0, 2.0, np.nan, 4.0])
    assert region_mean(errors, [True, False, True, True]) == 2.5
    assert math.isnan(region_mean(errors, [False] * 4))
