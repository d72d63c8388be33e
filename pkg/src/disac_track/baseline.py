"""Kalman filter with nearest-neighbour hard association (comparison baseline)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measurement import MeasurementSet
from .phd import MotionModel

EPS = 1e-9


@dataclass(frozen=True)
class KFTrack:
    mean: np.ndarray
    cov: np.ndarray
    ue_id: int = 0


def kf_predict(track: KFTrack, model: MotionModel) -> KFTrack:
    F = model.F
    cov = F @ track.cov @ F.T + model.Q
    return KFTrack(F @ track.mean, 0.5 * (cov + cov.T), track.ue_id)


def kf_update(track: KFTrack, z: np.ndarray, R: np.ndarray) -> KFTrack:
    """Standard update with ``H`` selecting the leading ``len(z)`` state entries."""
    dz = z.shape[0]
    P = track.cov
    S = P[:dz, :dz] + R
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        L = np.linalg.cholesky(S + EPS * np.eye(dz))
    A = np.linalg.solve(L, P[:dz, :])
    y = np.linalg.solve(L, z - track.mean[:dz])
    cov = 0.5 * (P + P.T) - A.T @ A
    return KFTrack(track.mean + A.T @ y, 0.5 * (cov + cov.T), track.ue_id)


def nearest(
    prediction: np.ndarray, Z: MeasurementSet, used: np.ndarray | None = None, gate: float = math.inf
) -> int | None:
    """Row of ``Z`` closest (Euclidean) to ``prediction``; lowest (ap_id, path_id) wins ties."""
    if len(Z) == 0:
        return None
    order = np.lexsort((Z.path_id, Z.ap_id))
    d = np.linalg.norm(Z.z[order] - prediction[: Z.z.shape[1]], axis=1)
    if used is not None:
        d = np.where(used[order], np.inf, d)
    k = int(np.argmin(d))
    if not (np.isfinite(d[k]) and d[k] <= gate):
        return None
    return int(order[k])


def kf_step(track: KFTrack, Z: MeasurementSet, model: MotionModel, gate: float = math.inf) -> KFTrack:
    """Predict, associate the nearest measurement and update; coast when none."""
    pred = kf_predict(track, model)
    k = nearest(pred.mean, Z, gate=gate)
    if k is None:
        return pred
    return kf_update(pred, Z.z[k], Z.cov[k])


def kf_nn_update(preds: Sequence[KFTrack], Z: MeasurementSet, gate: float = math.inf) -> list[KFTrack]:
    """Greedy nearest-neighbour assignment from the last track to the first,
    each measurement used at most once. Output keeps the input order."""
    used = np.zeros(len(Z), dtype=bool)
    out: list[KFTrack] = list(preds)
    for i in reversed(range(len(preds))):
        k = nearest(preds[i].mean, Z, used, gate)
        if k is not None:
            used[k] = True
            out[i] = kf_update(preds[i], Z.z[k], Z.cov[k])
    return out


def kf_nn_step(
    tracks: Sequence[KFTrack], Z: MeasurementSet, model: MotionModel, gate: float = math.inf
) -> list[KFTrack]:
    return kf_nn_update([kf_predict(t, model) for t in tracks], Z, gate)
