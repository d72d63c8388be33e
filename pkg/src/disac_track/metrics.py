"""Trajectory error, error CDF and active-AP statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ap_manager import ActiveSet
from .phd import UEState
from .scenario import Trajectory


@dataclass
class RunResult:
    estimates: list[list[UEState]]
    active: list[ActiveSet]
    truth: list[Trajectory] | None = None
    weights: list[list[float]] = field(default_factory=list)
    ue_ids: list[list[int]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.active) != len(self.estimates):
            raise ValueError("estimates and active sets must cover the same steps")
        if self.truth is not None and any(len(t) != len(self.estimates) for t in self.truth):
            raise ValueError("truth trajectories must cover the same steps as the estimates")


@dataclass
class ErrorReport:
    errors: np.ndarray
    mean: float
    missed_steps: int


def _greedy_pairs(est: np.ndarray, truth: np.ndarray) -> list[tuple[int, int]]:
    if est.shape[0] == 0:
        return []
    d = np.linalg.norm(est[:, None, :] - truth[None, :, :], axis=-1)
    pairs = []
    for _ in range(min(d.shape)):
        i, j = np.unravel_index(np.argmin(d), d.shape)
        pairs.append((int(i), int(j)))
        d[i, :] = np.inf
        d[:, j] = np.inf
    return pairs


def rms_trajectory_error(result: RunResult) -> ErrorReport:
    """Per-step RMS position error over greedily matched estimate/truth pairs.

    Steps without any estimate are NaN and left out of the mean.
    """
    if result.truth is None:
        raise ValueError("run has no ground truth")
    T = len(result.estimates)
    errors = np.full(T, np.nan)
    for t in range(T):
        est = result.estimates[t]
        if not est:
            continue
        truth = np.stack([traj.positions[t] for traj in result.truth])
        if len(est) > truth.shape[0]:
            raise ValueError(f"step {t}: more estimates than UEs")
        P = np.stack([e.position for e in est])
        if truth.shape[0] == 1:
            sq = [float(np.sum((P[0] - truth[0]) ** 2))]
        else:
            sq = [float(np.sum((P[i] - truth[j]) ** 2)) for i, j in _greedy_pairs(P, truth)]
        errors[t] = math.sqrt(sum(sq) / len(sq))
    finite = np.isfinite(errors)
    mean = float(errors[finite].mean()) if finite.any() else math.nan
    return ErrorReport(errors, mean, int((~finite).sum()))


def error_cdf(errors) -> list[tuple[float, float]]:
    """Empirical CDF ``(value, fraction)`` over the finite entries."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("error_cdf needs at least one value")
    e = np.sort(e[np.isfinite(e)])
    if e.size == 0:
        raise ValueError("error_cdf needs at least one finite value")
    frac = np.arange(1, e.size + 1) / e.size
    return list(zip(e.tolist(), frac.tolist()))


def active_ap_stats(result: RunResult) -> tuple[np.ndarray, float]:
    counts = np.array([len(a) for a in result.active], dtype=int)
    return counts, float(counts.mean()) if counts.size else 0.0


def summarize(result: RunResult) -> dict:
    counts, mean_active = active_ap_stats(result)
    out = {"mean_rmse_m": None, "p50": None, "p90": None, "p95": None,
           "mean_active_aps": mean_active, "missed_steps": None}
    if result.truth is not None:
        rep = rms_trajectory_error(result)
        finite = rep.errors[np.isfinite(rep.errors)]
        out["mean_rmse_m"] = rep.mean if finite.size else None
        if finite.size:
            p50, p90, p95 = np.percentile(finite, [50, 90, 95])
            out.update(p50=float(p50), p90=float(p90), p95=float(p95))
        out["missed_steps"] = rep.missed_steps
    return out


def region_mean(errors: np.ndarray, mask: Sequence[bool] | np.ndarray) -> float:
    """Mean of the finite errors selected by ``mask`` (NaN when none)."""
    sel = np.asarray(errors)[np.asarray(mask, dtype=bool)]
    sel = sel[np.isfinite(sel)]
    return float(sel.mean()) if sel.size else math.nan
