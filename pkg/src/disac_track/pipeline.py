"""Per-step tracking loop shared by the PHD tracker and the KF/NN baseline.

Each step runs: predict, choose the active APs from the predicted states,
collect their measurements, convert them to position measurements, update,
reduce and extract.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from . import phd
from .ap_manager import ActiveSet, ManagementPolicy, gate_measurements, select_active
from .baseline import KFTrack, kf_nn_update, kf_predict
from .measurement import DEFAULT_GATE, TransformDiagnostics, cluster_proxy, transform_set
from .metrics import RunResult
from .phd import GaussianMixture, MotionModel, UEState, UpdateParams
from .scenario import Deployment, StepMeasurements, Trajectory, UEInit

log = logging.getLogger(__name__)

TrackerKind = Literal["phd", "kf_nn"]


@dataclass
class TrackerConfig:
    kind: TrackerKind = "phd"
    policy: ManagementPolicy | None = field(default_factory=ManagementPolicy)
    motion: MotionModel = field(default_factory=lambda: MotionModel("random_walk", 0.01 * np.eye(3)))
    p_d: float = 0.9
    clutter_per_ap: float = 9.0
    # explicit clutter density (m^-3); overrides clutter_per_ap when set
    clutter_intensity: float | None = None
    prune_threshold: float = phd.DEFAULT_PRUNE
    merge_threshold: float = phd.DEFAULT_MERGE
    max_components: int = phd.DEFAULT_MAX_COMPONENTS
    cluster_gate: float = DEFAULT_GATE
    prior_std: float = 0.3
    prior_vel_std: float = 0.5
    birth_weight: float = 0.0
    renormalize: bool = False
    nn_gate: float = math.inf

    def __post_init__(self):
        if self.kind not in ("phd", "kf_nn"):
            raise ValueError(f"unknown tracker {self.kind!r}")
        UpdateParams(self.p_d, 0.0)

    def prior(self, init: UEInit) -> tuple[np.ndarray, np.ndarray]:
        h = self.motion.position_dim
        mean = np.zeros(self.motion.dim)
        mean[:h] = np.asarray(init.position, dtype=float)[:h]
        var = np.full(self.motion.dim, self.prior_std**2)
        if self.motion.kind == "constant_velocity":
            mean[h:] = np.asarray(init.velocity, dtype=float)[:h]
            var[h:] = self.prior_vel_std**2
        return mean, np.diag(var)


def clutter_density(cfg: TrackerConfig, deployment: Deployment, n_active: int) -> float:
    if cfg.clutter_intensity is not None:
        return float(cfg.clutter_intensity)
    if cfg.clutter_per_ap == 0:
        return 0.0
    if deployment.clutter_region is None:
        raise ValueError("clutter_per_ap needs a clutter region to turn into a density")
    r = deployment.clutter_region
    volume = float(np.prod(r[:, 1] - r[:, 0]))
    return cfg.clutter_per_ap * n_active / volume


MixtureSink = Callable[[GaussianMixture], None]


def run_tracker(
    deployment: Deployment,
    steps: Sequence[StepMeasurements],
    ue_inits: Sequence[UEInit],
    cfg: TrackerConfig,
    truth: Sequence[Trajectory] | None = None,
    mixture_sink: MixtureSink | None = None,
    timing: bool = False,
) -> RunResult:
    """Run one tracker over pre-generated measurements.

    ``truth`` is only attached to the result for scoring; the loop never
    reads it.
    """
    if cfg.kind == "phd":
        loop = _phd_loop
    else:
        loop = _kf_loop
    diag: dict = {"fallback_steps": 0, "clamped_points": 0, "clamped_measurements": 0}
    if timing:
        diag["step_seconds"] = []
    result = loop(deployment, steps, list(ue_inits), cfg, diag, mixture_sink, timing)
    result.truth = list(truth) if truth is not None else None
    result.__post_init__()
    return result


def _active(cfg, predicted, aps, t, prev) -> ActiveSet:
    if cfg.policy is None:
        return ActiveSet(t, frozenset(ap.id for ap in aps))
    return select_active(predicted, aps, cfg.policy, t, prev)


def _phd_loop(deployment, steps, ue_inits, cfg, diag, sink, timing) -> RunResult:
    aps = deployment.aps
    ap_map = deployment.ap_map
    h = cfg.motion.position_dim
    M = len(ue_inits)
    priors = [cfg.prior(u) for u in ue_inits]
    v = GaussianMixture(-1, np.ones(M), np.array([p[0] for p in priors]).reshape(M, -1),
                        np.array([p[1] for p in priors]).reshape(M, cfg.motion.dim, cfg.motion.dim))
    birth_cov = priors[0][1] if priors else np.eye(cfg.motion.dim) * cfg.prior_std**2
    tdiag = TransformDiagnostics()
    estimates, active_sets, weights, ids = [], [], [], []
    prev: ActiveSet | None = None
    for t, step in enumerate(steps):
        t0 = time.perf_counter()
        v = phd.predict(v, cfg.motion)
        v.time_step = t
        predicted = phd.extract_states(v, M, h)
        active = _active(cfg, predicted, aps, t, prev)
        diag["fallback_steps"] += int(active.fallback)
        rb = gate_measurements(step.per_ap, active, t)
        Z = cluster_proxy(transform_set(rb, ap_map, deployment.c, tdiag), cfg.cluster_gate)
        params = UpdateParams(cfg.p_d, clutter_density(cfg, deployment, len(active)))
        v, mass = phd.update_with_mass(v, Z, params)
        if cfg.birth_weight > 0 and len(Z):
            v = phd.concat(v, phd.measurement_birth(Z, mass, cfg.birth_weight, birth_cov))
        v = phd.prune(v, cfg.prune_threshold, cfg.renormalize)
        v = phd.merge(v, cfg.merge_threshold, cfg.max_components)
        order = phd.extraction_order(v)[:M]
        estimates.append([UEState.from_vector(v.means[i], h) for i in order])
        weights.append([float(v.weights[i]) for i in order])
        ids.append([ue_inits[r].id for r in range(len(order))])
        active_sets.append(active)
        prev = active
        if sink is not None:
            sink(v)
        if timing:
            diag["step_seconds"].append(time.perf_counter() - t0)
    diag["clamped_points"] = tdiag.clamped_points
    diag["clamped_measurements"] = tdiag.clamped_measurements
    return RunResult(estimates, active_sets, None, weights, ids, diag)


def _kf_loop(deployment, steps, ue_inits, cfg, diag, sink, timing) -> RunResult:
    aps = deployment.aps
    ap_map = deployment.ap_map
    h = cfg.motion.position_dim
    tracks = [KFTrack(*cfg.prior(u), u.id) for u in ue_inits]
    tdiag = TransformDiagnostics()
    estimates, active_sets, weights, ids = [], [], [], []
    prev: ActiveSet | None = None
    for t, step in enumerate(steps):
        t0 = time.perf_counter()
        preds = [kf_predict(tr, cfg.motion) for tr in tracks]
        predicted = [UEState.from_vector(p.mean, h) for p in preds]
        active = _active(cfg, predicted, aps, t, prev)
        diag["fallback_steps"] += int(active.fallback)
        rb = gate_measurements(step.per_ap, active, t)
        Z = transform_set(rb, ap_map, deployment.c, tdiag)
        tracks = kf_nn_update(preds, Z, cfg.nn_gate)
        estimates.append([UEState.from_vector(tr.mean, h) for tr in tracks])
        weights.append([1.0] * len(tracks))
        ids.append([tr.ue_id for tr in tracks])
        active_sets.append(active)
        prev = active
        if timing:
            diag["step_seconds"].append(time.perf_counter() - t0)
    diag["clamped_points"] = tdiag.clamped_points
    diag["clamped_measurements"] = tdiag.clamped_measurements
    return RunResult(estimates, active_sets, None, weights, ids, diag)
