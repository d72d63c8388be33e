"""Range-bearing to position-domain measurement conversion and proxy fusion.

Range-bearing covariances are ordered ``(delay, elevation, azimuth)`` in
``(s^2, rad^2, rad^2)``. Position measurements live in the UE position space
with covariances in ``m^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from . import kernels
from .geometry import APState, bearing_to_direction

SPEED_OF_LIGHT = 299_792_458.0
EPS = 1e-9
PSD_TOL = 1e-10
DEFAULT_GATE = 0.5


class MeasurementError(ValueError):
    """Invalid measurement content (bad covariance, negative delay, ...)."""


@dataclass(frozen=True)
class RangeBearingMeasurement:
    time_step: int
    ap_id: int
    path_id: int
    delay: float
    azimuth: float
    elevation: float
    cov: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def __post_init__(self):
        if not self.delay >= 0.0:
            raise MeasurementError(f"delay must be >= 0, got {self.delay}")
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(3, 3))

    @property
    def vector(self) -> np.ndarray:
        """``[delay, elevation, azimuth]``, matching the covariance order."""
        return np.array([self.delay, self.elevation, self.azimuth])


@dataclass(frozen=True)
class PositionMeasurement:
    time_step: int
    source_ap_ids: frozenset[int]
    z: np.ndarray
    cov: np.ndarray
    ap_id: int = -1
    path_id: int = -1

    @property
    def key(self) -> tuple[int, int]:
        return (self.ap_id, self.path_id)


@dataclass
class RangeBearingSet:
    """Array-backed batch of range-bearing measurements for one time step."""

    time_step: int
    ap_id: np.ndarray
    path_id: np.ndarray
    delay: np.ndarray
    elevation: np.ndarray
    azimuth: np.ndarray
    cov: np.ndarray

    def __len__(self) -> int:
        return int(self.delay.shape[0])

    def __iter__(self) -> Iterator[RangeBearingMeasurement]:
        for i in range(len(self)):
            yield RangeBearingMeasurement(
                self.time_step,
                int(self.ap_id[i]),
                int(self.path_id[i]),
                float(self.delay[i]),
                float(self.azimuth[i]),
                float(self.elevation[i]),
                self.cov[i].copy(),
            )

    @property
    def items(self) -> list[RangeBearingMeasurement]:
        return list(self)

    @classmethod
    def empty(cls, time_step: int) -> RangeBearingSet:
        return cls(
            time_step,
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
            np.zeros(0),
            np.zeros(0),
            np.zeros((0, 3, 3)),
        )

    @classmethod
    def from_items(cls, time_step: int, items: Iterable[RangeBearingMeasurement]) -> RangeBearingSet:
        items = list(items)
        if not items:
            return cls.empty(time_step)
        if any(m.time_step != time_step for m in items):
            raise MeasurementError("all measurements in a set must share the time step")
        return cls(
            time_step,
            np.array([m.ap_id for m in items], dtype=np.int64),
            np.array([m.path_id for m in items], dtype=np.int64),
            np.array([m.delay for m in items], dtype=float),
            np.array([m.elevation for m in items], dtype=float),
            np.array([m.azimuth for m in items], dtype=float),
            np.stack([m.cov for m in items]),
        )

    @classmethod
    def concat(cls, time_step: int, parts: Iterable[RangeBearingSet]) -> RangeBearingSet:
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(time_step)
        return cls(
            time_step,
            np.concatenate([p.ap_id for p in parts]),
            np.concatenate([p.path_id for p in parts]),
            np.concatenate([p.delay for p in parts]),
            np.concatenate([p.elevation for p in parts]),
            np.concatenate([p.azimuth for p in parts]),
            np.concatenate([p.cov for p in parts]),
        )


@dataclass
class MeasurementSet:
    """Position-domain measurements of one time step, stored as arrays.

    Row ``i`` carries ``z[i]``, ``cov[i]``, the ordering key
    ``(ap_id[i], path_id[i])`` and the set of contributing AP ids.
    """

    time_step: int
    z: np.ndarray
    cov: np.ndarray
    ap_id: np.ndarray
    path_id: np.ndarray
    sources: tuple[frozenset[int], ...]

    def __len__(self) -> int:
        return int(self.z.shape[0])

    def __iter__(self) -> Iterator[PositionMeasurement]:
        for i in range(len(self)):
            yield PositionMeasurement(
                self.time_step,
                self.sources[i],
                self.z[i].copy(),
                self.cov[i].copy(),
                int(self.ap_id[i]),
                int(self.path_id[i]),
            )

    @property
    def items(self) -> list[PositionMeasurement]:
        return list(self)

    @classmethod
    def empty(cls, time_step: int, dim: int = 3) -> MeasurementSet:
        return cls(
            time_step,
            np.zeros((0, dim)),
            np.zeros((0, dim, dim)),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            (),
        )

    @classmethod
    def from_items(cls, time_step: int, items: Iterable[PositionMeasurement]) -> MeasurementSet:
        items = list(items)
        if not items:
            return cls.empty(time_step)
        if any(m.time_step != time_step for m in items):
            raise MeasurementError("all measurements in a set must share the time step")
        return cls(
            time_step,
            np.stack([np.asarray(m.z, dtype=float) for m in items]),
            np.stack([np.asarray(m.cov, dtype=float) for m in items]),
            np.array([m.ap_id for m in items], dtype=np.int64),
            np.array([m.path_id for m in items], dtype=np.int64),
            tuple(frozenset(m.source_ap_ids) for m in items),
        )

    def take(self, idx) -> MeasurementSet:
        idx = np.asarray(idx, dtype=np.int64)
        return MeasurementSet(
            self.time_step,
            self.z[idx],
            self.cov[idx],
            self.ap_id[idx],
            self.path_id[idx],
            tuple(self.sources[i] for i in idx),
        )

    def sorted(self) -> MeasurementSet:
        """Rows ordered by ``(ap_id, path_id)`` (stable)."""
        return self.take(np.lexsort((self.path_id, self.ap_id)))


@dataclass
class TransformDiagnostics:
    """Counters for cubature points whose delay had to be clamped at zero."""

    clamped_points: int = 0
    clamped_measurements: int = 0


def factorize_psd_batch(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == cov`` for a stack of PSD matrices.

    Zero pivots (relative to the diagonal) produce zero columns, so
    rank-deficient inputs such as the all-zero matrix are accepted.
    """
    A = np.asarray(cov, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise MeasurementError(f"expected a stack of square matrices, got shape {A.shape}")
    diag = np.diagonal(A, axis1=1, axis2=2)
    if np.any(~np.isfinite(A)):
        raise MeasurementError("covariance contains non-finite entries")
    if np.any(diag < 0):
        raise MeasurementError("covariance has a negative diagonal entry")
    scale = np.sqrt(diag[:, :, None] * diag[:, None, :])
    if np.any(np.abs(A - np.swapaxes(A, 1, 2)) > PSD_TOL * scale + 1e-300):
        raise MeasurementError("covariance is not symmetric")
    L, ok = kernels.psd_factor(np.ascontiguousarray(A), PSD_TOL)
    if not ok:
        raise MeasurementError("covariance is indefinite")
    return L


def factorize_psd(cov) -> np.ndarray:
    """Single-matrix form of :func:`factorize_psd_batch`."""
    A = np.asarray(cov, dtype=float)
    return factorize_psd_batch(A[None])[0]


def _floor_psd(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    if cov.shape[0] == 0:
        return cov
    try:
        np.linalg.cholesky(cov)
        return cov  # all positive definite, nothing to floor
    except np.linalg.LinAlgError:
        pass
    evals = np.linalg.eigvalsh(cov)
    bad = evals.min(axis=-1) < 0
    if np.any(bad):
        vals, vecs = np.linalg.eigh(cov[bad])
        vals = np.clip(vals, 0.0, None)
        cov[bad] = np.einsum("nij,nj,nkj->nik", vecs, vals, vecs)
    return cov


def _transform_arrays(zt, cov, positions, rotations, c, diagnostics):
    L = factorize_psd_batch(cov)
    z, w, neg = kernels.cubature_points(
        np.ascontiguousarray(zt, dtype=float),
        L,
        np.ascontiguousarray(positions, dtype=float),
        np.ascontiguousarray(rotations, dtype=float),
        float(c),
    )
    if diagnostics is not None:
        diagnostics.clamped_points += int(neg.sum())
        diagnostics.clamped_measurements += int(neg.any(axis=1).sum())
    return z, _floor_psd(w)


def cubature_transform(
    m: RangeBearingMeasurement,
    ap: APState,
    c: float = SPEED_OF_LIGHT,
    diagnostics: TransformDiagnostics | None = None,
) -> PositionMeasurement:
    """Convert one range-bearing estimate to a position measurement.

    Cubature points are spread by a PSD factor of ``m.cov`` and each is
    mapped to ``p_AP + c * tau * R_AP @ direction(azimuth, elevation)``.
    Negative cubature delays are clamped to zero and counted in
    ``diagnostics`` when given.
    """
    if m.ap_id != ap.id:
        raise MeasurementError(f"measurement from AP {m.ap_id} transformed with AP {ap.id}")
    z, w = _transform_arrays(
        m.vector[None], m.cov[None], ap.position[None], ap.orientation[None], c, diagnostics
    )
    return PositionMeasurement(m.time_step, frozenset({m.ap_id}), z[0], w[0], m.ap_id, m.path_id)


def transform_set(
    rb: RangeBearingSet,
    aps: Mapping[int, APState],
    c: float = SPEED_OF_LIGHT,
    diagnostics: TransformDiagnostics | None = None,
) -> MeasurementSet:
    """Vectorised :func:`cubature_transform` over a multi-AP batch."""
    if len(rb) == 0:
        return MeasurementSet.empty(rb.time_step)
    ids = np.array(sorted(aps), dtype=np.int64)
    row = np.searchsorted(ids, rb.ap_id)
    row = np.minimum(row, ids.size - 1)
    unknown = ids[row] != rb.ap_id
    if np.any(unknown):
        raise MeasurementError(f"measurement references unknown AP {int(rb.ap_id[unknown][0])}")
    positions = np.stack([aps[int(k)].position for k in ids])[row]
    rotations = np.stack([aps[int(k)].orientation for k in ids])[row]
    zt = np.stack([rb.delay, rb.elevation, rb.azimuth], axis=1)
    z, w = _transform_arrays(zt, rb.cov, positions, rotations, c, diagnostics)
    return MeasurementSet(
        rb.time_step,
        z,
        w,
        rb.ap_id.copy(),
        rb.path_id.copy(),
        tuple(frozenset({int(k)}) for k in rb.ap_id),
    )


def _information(cov: np.ndarray) -> np.ndarray:
    eye = np.eye(cov.shape[-1])
    try:
        np.linalg.cholesky(cov)
        return np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(cov)
    for k in range(cov.shape[0]):
        try:
            np.linalg.cholesky(cov[k])
            out[k] = np.linalg.inv(cov[k])
        except np.linalg.LinAlgError:
            out[k] = np.linalg.inv(cov[k] + EPS * eye)
    return out


def _fuse_groups(base: MeasurementSet, info: np.ndarray, groups: list[list[int]]):
    """Information-form fusion of every group; singletons are copied as-is."""
    sizes = np.array([len(g) for g in groups])
    idx = np.concatenate(groups)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    info_z = np.einsum("kij,kj->ki", info, base.z)
    total = np.add.reduceat(info[idx], starts, axis=0)
    cov = np.linalg.inv(total)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    z = np.einsum("kij,kj->ki", cov, np.add.reduceat(info_z[idx], starts, axis=0))
    single = sizes == 1
    first = idx[starts]
    z[single] = base.z[first[single]]
    cov[single] = base.cov[first[single]]
    return z, cov


def cluster_groups(ms: MeasurementSet, gate: float = DEFAULT_GATE):
    """Grouping behind :func:`cluster_proxy`.

    Returns ``(base, groups, z, cov)``: the input sorted by
    ``(ap_id, path_id)``, the member rows of ``base`` for each group, and
    each group's fused mean and covariance.
    """
    if not gate > 0:
        raise ValueError("gate must be > 0")
    base = ms.sorted()
    n = len(base)
    groups: list[list[int]] = [[i] for i in range(n)]
    if n < 2:
        return base, groups, base.z, base.cov
    info = _information(base.cov)
    z = base.z
    cov = base.cov
    while True:
        labels = kernels.greedy_partition(np.ascontiguousarray(z), float(gate))
        k = int(labels.max()) + 1
        if k == len(groups):
            break
        merged: list[list[int]] = [[] for _ in range(k)]
        for g, lab in zip(groups, labels):
            merged[lab].extend(g)
        groups = [sorted(g) for g in merged]
        z, cov = _fuse_groups(base, info, groups)
    return base, groups, z, cov


def cluster_proxy(ms: MeasurementSet, gate: float = DEFAULT_GATE) -> MeasurementSet:
    """Fuse measurements that appear to observe the same object.

    Measurements are processed in ``(ap_id, path_id)`` order and grouped by
    centroid-gated greedy agglomeration; grouping is repeated on the fused
    proxies until no two of them can be joined, so the result is a fixed
    point. Each group is fused in information form; singletons pass through
    untouched. A proxy keeps the key of its first member and the union of
    the members' source APs.
    """
    base, groups, z, cov = cluster_groups(ms, gate)
    if len(groups) == len(base):
        return base
    first = [g[0] for g in groups]
    return MeasurementSet(
        base.time_step,
        z,
        cov,
        base.ap_id[first],
        base.path_id[first],
        tuple(base.sources[g[0]] if len(g) == 1 else frozenset().union(*(base.sources[i] for i in g))
              for g in groups),
    )
