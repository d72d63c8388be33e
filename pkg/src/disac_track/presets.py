"""Ready-made synthetic deployments.

``room`` mirrors the indoor setup reported for the measured system: eight
wall-mounted panels, a 12 m straight UE route sampled at 780 steps, and
sector FoVs of 8.5 m / 60 degrees. ``corridor`` is a two-AP handover
scenario: panel 1 at one end, panel 7 at the other, the UE walking from one
to the other.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import APState, FoV, rotation_from_ypr
from .measurement import SPEED_OF_LIGHT
from .phd import MotionModel
from .scenario import ScenarioConfig, UEInit

ROOM_FOV = FoV("sector", 8.5, math.radians(60.0))
ROOM_Q = np.diag([0.1**2] * 3)
ROOM_STEPS = 780

ROOM_PANELS = {
    1: (0.2, 2.0),
    2: (0.2, 8.0),
    3: (4.5, 0.2),
    4: (4.5, 9.8),
    5: (9.5, 0.2),
    6: (9.5, 9.8),
    7: (13.8, 2.0),
    8: (13.8, 8.0),
}
ROOM_CENTER = (7.0, 5.0)


def noise_template(range_std: float = 0.05, elevation_std: float = 0.02, azimuth_std: float = 0.02,
                   c: float = SPEED_OF_LIGHT) -> np.ndarray:
    """Diagonal (delay, elevation, azimuth) covariance from per-axis std devs."""
    return np.diag([(range_std / c) ** 2, elevation_std**2, azimuth_std**2])


def _truth_motion(dt: float = 1.0) -> MotionModel:
    # near-straight walk: millimetre position jitter, tiny velocity drift
    return MotionModel("constant_velocity", np.diag([1e-6] * 3 + [1e-10] * 3), dt)


def room(
    seed: int = 0,
    steps: int = ROOM_STEPS,
    p_d: float = 0.9,
    clutter_per_ap: float = 9.0,
    noise: np.ndarray | None = None,
    fov: FoV = ROOM_FOV,
) -> ScenarioConfig:
    aps = []
    for pid, (x, y) in ROOM_PANELS.items():
        yaw = math.atan2(ROOM_CENTER[1] - y, ROOM_CENTER[0] - x)
        aps.append(APState(pid, np.array([x, y, 2.0]), rotation_from_ypr(yaw, 0.0, 0.0), fov))
    start = np.array([1.0, 5.0, 1.0])
    vel = np.array([12.0 / max(steps - 1, 1), 0.0, 0.0])
    return ScenarioConfig(
        seed=seed,
        T=steps,
        aps=aps,
        ue_inits=[UEInit(1, start, vel)],
        motion=_truth_motion(),
        p_d=p_d,
        clutter_per_ap=clutter_per_ap,
        clutter_region=np.array([[0.0, 14.0], [0.0, 10.0], [0.0, 3.0]]),
        noise=noise_template() if noise is None else noise,
    )


def corridor(
    seed: int = 0,
    steps: int = 300,
    p_d: float = 0.9,
    clutter_per_ap: float = 2.0,
    noise: np.ndarray | None = None,
    fov: FoV = ROOM_FOV,
    sensing_range: float = 30.0,
) -> ScenarioConfig:
    """Panel 1 at x=0 facing +x, panel 7 at x=14 facing -x, UE from x=1 to 13.

    Both panels physically observe the UE over the whole corridor (up to
    ``sensing_range``); their management FoVs overlap only in the middle.
    """
    aps = [
        APState(1, np.array([0.0, 0.0, 1.5]), rotation_from_ypr(0.0, 0.0, 0.0), fov),
        APState(7, np.array([14.0, 0.0, 1.5]), rotation_from_ypr(math.pi, 0.0, 0.0), fov),
    ]
    start = np.array([1.0, 1.0, 1.0])
    vel = np.array([12.0 / max(steps - 1, 1), 0.0, 0.0])
    return ScenarioConfig(
        seed=seed,
        T=steps,
        aps=aps,
        ue_inits=[UEInit(1, start, vel)],
        motion=_truth_motion(),
        p_d=p_d,
        clutter_per_ap=clutter_per_ap,
        clutter_region=np.array([[-1.0, 15.0], [-3.0, 3.0], [0.0, 3.0]]),
        noise=noise_template() if noise is None else noise,
        visibility={1: FoV("sphere", sensing_range), 7: FoV("sphere", sensing_range)},
    )
