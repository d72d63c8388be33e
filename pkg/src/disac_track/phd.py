"""Gaussian-mixture PHD filter: predict, update, reduce, extract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import kernels
from .measurement import MeasurementSet

EPS = 1e-9
DEFAULT_PRUNE = 1e-4
DEFAULT_MERGE = 4.0
DEFAULT_MAX_COMPONENTS = 500

MotionKind = Literal["random_walk", "constant_velocity"]


@dataclass(frozen=True)
class MotionModel:
    """Linear-Gaussian transition ``x' ~ N(F x, Q)``.

    ``random_walk`` uses ``F = I`` over a position-only state; for
    ``constant_velocity`` the state is ``[position, velocity]`` and ``Q``
    must be square of twice the position dimension.
    """

    kind: MotionKind = "random_walk"
    Q: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dt: float = 1.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semi-definite")
        if self.kind == "constant_velocity" and Q.shape[0] % 2:
            raise ValueError("constant_velocity needs an even state dimension")
        if self.kind not in ("random_walk", "constant_velocity"):
            raise ValueError(f"unknown motion model {self.kind!r}")
        object.__setattr__(self, "Q", Q)

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def position_dim(self) -> int:
        return self.dim // 2 if self.kind == "constant_velocity" else self.dim

    @property
    def F(self) -> np.ndarray:
        if self.kind == "random_walk":
            return np.eye(self.dim)
        h = self.position_dim
        F = np.eye(self.dim)
        F[:h, h:] = self.dt * np.eye(h)
        return F


@dataclass(frozen=True)
class UpdateParams:
    p_d: float = 0.9
    lambda_c: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_d <= 1.0:
            raise ValueError("p_d must lie in [0, 1]")
        if not self.lambda_c >= 0.0:
            raise ValueError("lambda_c must be >= 0")


@dataclass(frozen=True)
class UEState:
    position: np.ndarray
    velocity: np.ndarray | None = None

    @classmethod
    def from_vector(cls, x, position_dim: int = 3) -> UEState:
        x = np.asarray(x, dtype=float)
        vel = x[position_dim : 2 * position_dim].copy() if x.size >= 2 * position_dim else None
        return cls(x[:position_dim].copy(), vel)


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class GaussianMixture:
    """PHD intensity as a weighted sum of Gaussians (array storage)."""

    time_step: int
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        J = self.weights.shape[0]
        means = np.asarray(self.means, dtype=float)
        if means.ndim != 2 or means.shape[0] != J:
            if means.size % max(J, 1) or (J == 0 and means.size):
                raise ValueError(f"{J} weights but means of shape {means.shape}")
            means = means.reshape(J, -1) if J else means.reshape(0, means.shape[-1] if means.ndim else 0)
        self.means = means
        d = means.shape[1]
        covs = np.asarray(self.covs, dtype=float)
        if covs.size != J * d * d:
            raise ValueError(f"covariances of shape {covs.shape} do not match {J} components of dimension {d}")
        self.covs = covs.reshape(J, d, d)
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and non-negative")

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(float(w), m, P) for w, m, P in zip(self.weights, self.means, self.covs)]

    @classmethod
    def from_components(cls, time_step: int, comps, dim: int | None = None) -> GaussianMixture:
        comps = list(comps)
        if not comps:
            d = dim or 0
            return cls(time_step, np.zeros(0), np.zeros((0, d)), np.zeros((0, d, d)))
        return cls(
            time_step,
            np.array([c.weight for c in comps]),
            np.stack([np.asarray(c.mean, dtype=float).reshape(-1) for c in comps]),
            np.stack([np.atleast_2d(np.asarray(c.cov, dtype=float)) for c in comps]),
        )

    @classmethod
    def empty(cls, time_step: int, dim: int) -> GaussianMixture:
        return cls(time_step, np.zeros(0), np.zeros((0, dim)), np.zeros((0, dim, dim)))

    def evaluate(self, x) -> np.ndarray:
        """Intensity at each row of ``x`` (shape ``(n, d)`` or ``(n,)`` for d = 1)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        out = np.zeros(x.shape[0])
        for w, m, P in zip(self.weights, self.means, self.covs):
            out += w * gaussian_pdf(x, m, P)
        return out

    def copy(self) -> GaussianMixture:
        return GaussianMixture(self.time_step, self.weights.copy(), self.means.copy(), self.covs.copy())


def _regularized_cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    fixed = (vecs * np.clip(vals, 0.0, None)) @ vecs.T + EPS * np.eye(cov.shape[0])
    return np.linalg.cholesky(fixed)


def gaussian_pdf(x, mean, cov) -> np.ndarray | float:
    """Multivariate normal density; rows of ``x`` are evaluated independently.

    Non-SPD covariances are projected to PSD and loaded with ``1e-9 * I``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.shape[0]
    cov = np.asarray(cov, dtype=float).reshape(d, d)
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim <= 1 and x_arr.size == d
    X = x_arr.reshape(-1, d)
    L = _regularized_cholesky(cov)
    y = np.linalg.solve(L, (X - mean).T)
    maha = np.einsum("ij,ij->j", y, y)
    log_norm = np.log(np.diag(L)).sum() + 0.5 * d * math.log(2.0 * math.pi)
    out = np.exp(-0.5 * maha - log_norm)
    return float(out[0]) if scalar else out


def predict(v: GaussianMixture, model: MotionModel) -> GaussianMixture:
    """Propagate every component through the motion model; weights are kept."""
    if v.dim != model.dim and len(v):
        raise ValueError(f"state dimension {v.dim} does not match motion model dimension {model.dim}")
    F = model.F
    means = v.means @ F.T
    covs = np.einsum("ij,njk,lk->nil", F, v.covs, F) + model.Q
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return GaussianMixture(v.time_step + 1, v.weights.copy(), means, covs)


def update_with_mass(
    v: GaussianMixture, Z: MeasurementSet, params: UpdateParams
) -> tuple[GaussianMixture, np.ndarray]:
    """GM-PHD update, also returning the summed updated weight per measurement."""
    if Z.time_step != v.time_step:
        raise ValueError(f"mixture at step {v.time_step} updated with measurements of step {Z.time_step}")
    missed_w = (1.0 - params.p_d) * v.weights
    N = len(Z)
    if N == 0 or len(v) == 0:
        out = GaussianMixture(v.time_step, missed_w, v.means.copy(), v.covs.copy())
        return out, np.zeros(N)
    if Z.z.shape[1] > v.dim:
        raise ValueError("measurement dimension exceeds state dimension")
    w_new, m_new, P_new = kernels.gm_update(
        np.ascontiguousarray(v.weights),
        np.ascontiguousarray(v.means),
        np.ascontiguousarray(v.covs),
        np.ascontiguousarray(Z.z),
        np.ascontiguousarray(Z.cov),
        float(params.p_d),
        float(params.lambda_c),
    )
    J, d = v.means.shape
    weights = np.concatenate([missed_w, w_new.reshape(-1)])
    means = np.concatenate([v.means, m_new.reshape(N * J, d)])
    covs = np.concatenate([v.covs, P_new.reshape(N * J, d, d)])
    return GaussianMixture(v.time_step, weights, means, covs), w_new.sum(axis=1)


def update(v: GaussianMixture, Z: MeasurementSet, params: UpdateParams) -> GaussianMixture:
    """GM-PHD measurement update over the whole set ``Z`` at once.

    The output holds the ``(1 - p_D)`` missed-detection copies followed by
    one Kalman-updated copy of every component per measurement, each
    measurement using its own covariance.
    """
    return update_with_mass(v, Z, params)[0]


def prune(v: GaussianMixture, threshold: float = DEFAULT_PRUNE, renormalize: bool = False) -> GaussianMixture:
    if threshold < 0:
        raise ValueError("prune threshold must be >= 0")
    keep = v.weights >= threshold
    out = GaussianMixture(v.time_step, v.weights[keep], v.means[keep], v.covs[keep])
    if renormalize and len(out):
        out.weights *= v.total_weight / out.total_weight
    return out


def cap(v: GaussianMixture, max_components: int) -> GaussianMixture:
    """Keep at most ``max_components`` components, largest weights first."""
    if len(v) <= max_components:
        return v
    idx = np.sort(np.argsort(-v.weights, kind="stable")[:max_components])
    return GaussianMixture(v.time_step, v.weights[idx], v.means[idx], v.covs[idx])


def merge(
    v: GaussianMixture, threshold: float = DEFAULT_MERGE, max_components: int = DEFAULT_MAX_COMPONENTS
) -> GaussianMixture:
    """Merge components within ``threshold`` squared Mahalanobis distance.

    Greedy passes (highest weight first, distance under the absorbed
    component's covariance) repeat until a pass merges nothing, which makes
    the operation idempotent. The result is then capped to
    ``max_components``.
    """
    if not threshold > 0:
        raise ValueError("merge threshold must be > 0")
    w, m, P = v.weights, v.means, v.covs
    while len(w) > 1:
        w, m, P, absorbed = kernels.merge_pass(
            np.ascontiguousarray(w), np.ascontiguousarray(m), np.ascontiguousarray(P), float(threshold)
        )
        if absorbed == 0:
            break
    return cap(GaussianMixture(v.time_step, w, m, P), max_components)


def extract_states(v: GaussianMixture, M: int, position_dim: int | None = None) -> list[UEState]:
    """Means of the ``M`` heaviest components in descending weight order."""
    if M < 0:
        raise ValueError("M must be >= 0")
    idx = extraction_order(v)[:M]
    pdim = position_dim or min(3, v.dim)
    return [UEState.from_vector(v.means[i], pdim) for i in idx]


def extraction_order(v: GaussianMixture) -> np.ndarray:
    return np.argsort(-v.weights, kind="stable")


def measurement_birth(
    Z: MeasurementSet, mass: np.ndarray, weight: float, prior_cov: np.ndarray, threshold: float = 0.5
) -> GaussianMixture:
    """Low-weight components at measurements the update barely explained.

    A measurement spawns a component when its updated weight mass is below
    ``threshold``. The position block of the new covariance is the
    measurement covariance plus the prior's position block.
    """
    d = prior_cov.shape[0]
    idx = np.flatnonzero(mass < threshold)
    means = np.zeros((idx.size, d))
    dz = Z.z.shape[1]
    means[:, :dz] = Z.z[idx]
    covs = np.repeat(prior_cov[None], idx.size, axis=0)
    covs[:, :dz, :dz] += Z.cov[idx]
    return GaussianMixture(Z.time_step, np.full(idx.size, weight), means, covs)


def concat(a: GaussianMixture, b: GaussianMixture) -> GaussianMixture:
    return GaussianMixture(
        a.time_step,
        np.concatenate([a.weights, b.weights]),
        np.concatenate([a.means, b.means]),
        np.concatenate([a.covs, b.covs]),
    )
