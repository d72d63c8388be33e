"""3D pose math and access-point field-of-view tests.

Conventions used throughout the package:

* azimuth is measured in the local x-y plane from +x towards +y;
* elevation is a polar angle measured from +z, so ``pi/2`` is horizontal;
* an AP's boresight is its orientation matrix applied to local +x.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

ORTHO_TOL = 1e-9

FoVKind = Literal["sector", "sphere", "all"]


class GeometryError(ValueError):
    """Raised for degenerate geometric input (zero vectors, bad rotations)."""


def as_vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.size != 3:
        raise GeometryError(f"expected 3 components, got shape {arr.shape}")
    arr = arr.reshape(3)
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"non-finite vector {arr}")
    return arr


def angle_between(a, b) -> float:
    """Angle in radians between two non-zero vectors, in ``[0, pi]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise GeometryError("angle_between is undefined for zero-norm vectors")
    cos = float(np.dot(a, b) / (na * nb))
    return math.acos(min(1.0, max(-1.0, cos)))


def bearing_to_direction(azimuth, elevation) -> np.ndarray:
    """Unit direction for an (azimuth, polar elevation) pair.

    Broadcasts over array inputs; the trailing axis of the result has length 3.
    """
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    sin_el = np.sin(el)
    return np.stack((np.cos(az) * sin_el, np.sin(az) * sin_el, np.cos(el)), axis=-1)


def direction_to_bearing(d) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`bearing_to_direction` for arbitrary-length vectors.

    Returns ``(norm, azimuth, elevation)``. Azimuth is in ``(-pi, pi]``.
    """
    d = np.asarray(d, dtype=float)
    r = np.linalg.norm(d, axis=-1)
    az = np.arctan2(d[..., 1], d[..., 0])
    # arctan2 of (horizontal, vertical) keeps precision near the poles, unlike arccos
    el = np.arctan2(np.hypot(d[..., 0], d[..., 1]), d[..., 2])
    return r, az, el


def rotation_from_ypr(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation ``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` (intrinsic z-y'-x'')."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


def check_rotation(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got shape {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=ORTHO_TOL):
        raise GeometryError("rotation matrix is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
        raise GeometryError("rotation matrix must have determinant +1")
    return r


@dataclass(frozen=True)
class FoV:
    """Effective service region of an AP.

    ``sector`` bounds both distance and the angle off boresight, ``sphere``
    only the distance, ``all`` nothing.
    """

    kind: FoVKind = "sector"
    d_th: float = math.inf
    theta_th: float = math.pi

    def __post_init__(self):
        if self.kind not in ("sector", "sphere", "all"):
            raise ValueError(f"unknown FoV kind {self.kind!r}")
        if self.kind != "all" and not self.d_th > 0:
            raise ValueError("FoV d_th must be > 0")
        if self.kind == "sector" and not (0.0 < self.theta_th <= math.pi):
            raise ValueError("FoV theta_th must lie in (0, pi]")


@dataclass(frozen=True)
class APState:
    id: int
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))
    fov: FoV = field(default_factory=lambda: FoV("all"))

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position))
        object.__setattr__(self, "orientation", check_rotation(self.orientation))

    @property
    def boresight(self) -> np.ndarray:
        return self.orientation[:, 0]

    def to_local(self, p) -> np.ndarray:
        """Express global point(s) ``p`` in the AP frame (rows of length 3)."""
        return (np.asarray(p, dtype=float) - self.position) @ self.orientation

    def to_global(self, local) -> np.ndarray:
        return np.asarray(local, dtype=float) @ self.orientation.T + self.position


def in_fov(fov: FoV, ap: APState, p) -> bool:
    """Membership of ``p`` in ``fov`` placed at the pose of ``ap``."""
    if fov.kind == "all":
        return True
    rel = as_vec3(p) - ap.position
    dist = float(np.linalg.norm(rel))
    if dist > fov.d_th:
        return False
    if fov.kind == "sphere" or dist == 0.0:
        return True
    return angle_between(rel, ap.boresight) <= fov.theta_th


def fov_contains(ap: APState, p) -> bool:
    """True when ``p`` lies inside the AP's field of view (boundary included)."""
    return in_fov(ap.fov, ap, p)
