"""Synthetic scenarios and measurement trace files.

Random draws come from independent streams keyed by ``(seed, purpose, id,
step)`` so that, for example, switching clutter off leaves the LoS noise of a
run untouched.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import APState, FoV, direction_to_bearing, in_fov
from .measurement import SPEED_OF_LIGHT, RangeBearingSet, factorize_psd
from .phd import MotionModel

# stream purposes
_MOTION, _DETECT, _NOISE, _CLUTTER = 1, 2, 3, 4

TRACE_COLUMNS = (
    "time_step",
    "ap_id",
    "path_id",
    "delay_s",
    "elevation_rad",
    "azimuth_rad",
    "c00",
    "c01",
    "c02",
    "c11",
    "c12",
    "c22",
)
TRUTH_COLUMNS = ("time_step", "ue_id", "x", "y", "z")
_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


class TraceError(ValueError):
    """Malformed trace or deployment file."""


def fmt(x: float) -> str:
    """Decimal text with 17 significant digits (round-trips every double)."""
    return format(float(x), ".17g")


def rng_for(seed: int, purpose: int, *ids: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(purpose, *ids)))


@dataclass(frozen=True)
class UEInit:
    id: int
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class ScenarioConfig:
    seed: int
    T: int
    aps: list[APState]
    ue_inits: list[UEInit]
    motion: MotionModel = field(default_factory=MotionModel)
    p_d: float = 0.9
    clutter_per_ap: float = 9.0
    clutter_region: np.ndarray = field(default_factory=lambda: np.array([[-10.0, 10.0]] * 3))
    noise: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    c: float = SPEED_OF_LIGHT
    # per-AP region in which the AP physically observes a UE; defaults to its FoV
    visibility: dict[int, FoV] = field(default_factory=dict)

    def __post_init__(self):
        self.clutter_region = np.asarray(self.clutter_region, dtype=float).reshape(3, 2)
        self.noise = np.asarray(self.noise, dtype=float).reshape(3, 3)
        if not 0.0 <= self.p_d <= 1.0:
            raise ValueError("p_d must lie in [0, 1]")
        if self.clutter_per_ap < 0:
            raise ValueError("clutter_per_ap must be >= 0")
        if self.volume <= 0:
            raise ValueError("clutter_region must have positive volume")
        ids = [ap.id for ap in self.aps]
        if len(set(ids)) != len(ids):
            raise ValueError("AP ids must be unique")
        if any(i < 0 for i in ids) or any(u.id < 0 for u in self.ue_inits):
            raise ValueError("AP and UE ids must be non-negative")
        factorize_psd(self.noise)

    @property
    def volume(self) -> float:
        return float(np.prod(self.clutter_region[:, 1] - self.clutter_region[:, 0]))

    @property
    def ap_map(self) -> dict[int, APState]:
        return {ap.id: ap for ap in self.aps}

    def sensing_region(self, ap: APState) -> FoV:
        return self.visibility.get(ap.id, ap.fov)


@dataclass
class Trajectory:
    ue_id: int
    positions: np.ndarray
    velocities: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.positions.shape[0])


@dataclass
class StepMeasurements:
    time_step: int
    per_ap: dict[int, RangeBearingSet]

    def total(self) -> int:
        return sum(len(s) for s in self.per_ap.values())


@dataclass
class Deployment:
    """What a tracker may know about a run: AP layout and physical constants."""

    aps: list[APState]
    c: float = SPEED_OF_LIGHT
    clutter_region: np.ndarray | None = None
    steps: int = 0

    @property
    def ap_map(self) -> dict[int, APState]:
        return {ap.id: ap for ap in self.aps}


@dataclass
class Trace:
    deployment: Deployment
    steps: list[StepMeasurements]
    truth: list[Trajectory] | None = None


def generate_trajectory(cfg: ScenarioConfig, ue_id: int) -> Trajectory:
    """Sample a ground-truth path from the configured motion model."""
    init = next((u for u in cfg.ue_inits if u.id == ue_id), None)
    if init is None:
        raise KeyError(f"no initial state configured for UE {ue_id}")
    model = cfg.motion
    h = model.position_dim
    x = np.zeros(model.dim)
    x[:h] = np.asarray(init.position, dtype=float)[:h]
    if model.kind == "constant_velocity":
        x[h:] = np.asarray(init.velocity, dtype=float)[:h]
    states = np.empty((cfg.T, model.dim))
    if cfg.T == 0:
        return Trajectory(ue_id, np.zeros((0, h)), np.zeros((0, h)) if model.kind == "constant_velocity" else None)
    L = factorize_psd(model.Q)
    draws = rng_for(cfg.seed, _MOTION, ue_id).standard_normal((max(cfg.T - 1, 0), model.dim)) @ L.T
    F = model.F
    states[0] = x
    for t in range(1, cfg.T):
        states[t] = F @ states[t - 1] + draws[t - 1]
    vel = states[:, h:].copy() if model.kind == "constant_velocity" else None
    return Trajectory(ue_id, states[:, :h].copy(), vel)


def _range_bearing(ap: APState, points: np.ndarray, c: float):
    r, az, el = direction_to_bearing(ap.to_local(points))
    return r / c, el, az


def _wrap(el: np.ndarray, az: np.ndarray):
    # keep elevation in [0, pi] by reflecting through the pole
    el = np.mod(el, 2.0 * math.pi)
    flip = el > math.pi
    el = np.where(flip, 2.0 * math.pi - el, el)
    az = np.where(flip, az + math.pi, az)
    az = np.mod(az + math.pi, 2.0 * math.pi) - math.pi
    return el, az


def generate_measurements(cfg: ScenarioConfig, trajs: Sequence[Trajectory], t: int) -> StepMeasurements:
    """Range-bearing measurements of every AP at step ``t``.

    Each UE inside an AP's sensing region yields a LoS estimate with
    probability ``p_d``; every AP adds ``Poisson(clutter_per_ap)`` estimates
    of points drawn uniformly in the clutter box. Path ids are assigned in
    order of increasing delay, as a channel estimator would.
    """
    if not 0 <= t < cfg.T:
        raise IndexError(f"step {t} outside [0, {cfg.T})")
    noise_L = factorize_psd(cfg.noise)
    lo, hi = cfg.clutter_region[:, 0], cfg.clutter_region[:, 1]
    per_ap: dict[int, RangeBearingSet] = {}
    for ap in sorted(cfg.aps, key=lambda a: a.id):
        region = cfg.sensing_region(ap)
        u = rng_for(cfg.seed, _DETECT, ap.id, t).random(len(trajs))
        eps = rng_for(cfg.seed, _NOISE, ap.id, t).standard_normal((len(trajs), 3)) @ noise_L.T
        delays, els, azs = [], [], []
        for m, traj in enumerate(trajs):
            p = traj.positions[t]
            if np.array_equal(p, ap.position) or not in_fov(region, ap, p):
                continue
            if u[m] >= cfg.p_d:
                continue
            tau, el, az = _range_bearing(ap, p[None], cfg.c)
            delays.append(tau[0] + eps[m, 0])
            els.append(el[0] + eps[m, 1])
            azs.append(az[0] + eps[m, 2])
        crng = rng_for(cfg.seed, _CLUTTER, ap.id, t)
        n_clutter = int(crng.poisson(cfg.clutter_per_ap)) if cfg.clutter_per_ap > 0 else 0
        if n_clutter:
            pts = lo + (hi - lo) * crng.random((n_clutter, 3))
            pts = pts[~np.all(pts == ap.position, axis=1)]
            tau, el, az = _range_bearing(ap, pts, cfg.c)
            delays.extend(tau)
            els.extend(el)
            azs.extend(az)
        delay = np.maximum(np.asarray(delays, dtype=float), 0.0)
        el, az = _wrap(np.asarray(els, dtype=float), np.asarray(azs, dtype=float))
        order = np.argsort(delay, kind="stable")
        n = delay.size
        per_ap[ap.id] = RangeBearingSet(
            t,
            np.full(n, ap.id, dtype=np.int64),
            np.arange(n, dtype=np.int64),
            delay[order],
            el[order],
            az[order],
            np.repeat(cfg.noise[None], n, axis=0),
        )
    return StepMeasurements(t, per_ap)


def generate_scenario(cfg: ScenarioConfig) -> tuple[list[Trajectory], list[StepMeasurements]]:
    trajs = [generate_trajectory(cfg, u.id) for u in cfg.ue_inits]
    steps = [generate_measurements(cfg, trajs, t) for t in range(cfg.T)]
    return trajs, steps


def deployment_of(cfg: ScenarioConfig) -> Deployment:
    return Deployment(list(cfg.aps), cfg.c, cfg.clutter_region.copy(), cfg.T)


# --- trace files -------------------------------------------------------------


def fov_to_dict(fov: FoV) -> dict:
    out: dict = {"kind": fov.kind}
    if fov.kind != "all":
        out["d_th"] = fov.d_th
    if fov.kind == "sector":
        out["theta_th"] = fov.theta_th
    return out


def fov_from_dict(d: Mapping, where: str = "fov") -> FoV:
    try:
        kind = d.get("kind", "sector")
        theta = d.get("theta_th")
        if theta is None and "theta_th_deg" in d:
            theta = math.radians(float(d["theta_th_deg"]))
        return FoV(kind, float(d.get("d_th", math.inf)), float(theta if theta is not None else math.pi))
    except (TypeError, ValueError) as exc:
        raise TraceError(f"{where}: {exc}") from None


def deployment_to_dict(dep: Deployment) -> dict:
    return {
        "c": dep.c,
        "steps": dep.steps,
        "clutter_region": None if dep.clutter_region is None else dep.clutter_region.tolist(),
        "aps": [
            {
                "id": ap.id,
                "position": ap.position.tolist(),
                "rotation": ap.orientation.tolist(),
                "fov": fov_to_dict(ap.fov),
            }
            for ap in dep.aps
        ],
    }


def deployment_from_dict(d: Mapping) -> Deployment:
    aps = []
    for i, a in enumerate(d.get("aps", [])):
        try:
            aps.append(
                APState(int(a["id"]), np.array(a["position"], dtype=float), np.array(a["rotation"], dtype=float),
                        fov_from_dict(a.get("fov", {"kind": "all"}), f"aps[{i}].fov"))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceError(f"deployment aps[{i}]: {exc}") from None
    region = d.get("clutter_region")
    return Deployment(
        aps,
        float(d.get("c", SPEED_OF_LIGHT)),
        None if region is None else np.asarray(region, dtype=float).reshape(3, 2),
        int(d.get("steps", 0)),
    )


def save_trace(
    path: str | Path,
    deployment: Deployment,
    steps: Sequence[StepMeasurements],
    trajs: Sequence[Trajectory] | None = None,
) -> Path:
    """Write ``deployment.json``, ``measurements.csv`` and optionally ``truth.csv``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    dep = Deployment(deployment.aps, deployment.c, deployment.clutter_region, len(steps))
    (path / "deployment.json").write_text(json.dumps(deployment_to_dict(dep), indent=2) + "\n")
    with open(path / "measurements.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for step in steps:
            for ap_id in sorted(step.per_ap):
                s = step.per_ap[ap_id]
                for i in range(len(s)):
                    cov = s.cov[i]
                    w.writerow(
                        [step.time_step, int(s.ap_id[i]), int(s.path_id[i]),
                         fmt(s.delay[i]), fmt(s.elevation[i]), fmt(s.azimuth[i])]
                        + [fmt(cov[a, b]) for a, b in _UPPER]
                    )
    truth_path = path / "truth.csv"
    if trajs is not None:
        write_truth(truth_path, trajs)
    elif truth_path.exists():
        truth_path.unlink()
    return path


def write_truth(path: str | Path, trajs: Sequence[Trajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        T = max((len(t) for t in trajs), default=0)
        for t in range(T):
            for traj in trajs:
                p = traj.positions[t]
                w.writerow([t, traj.ue_id, fmt(p[0]), fmt(p[1]), fmt(p[2])])


def _parse(value: str, kind, fname: str, line: int, column: str):
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise TraceError(f"{fname} row {line}, column '{column}': cannot parse {value!r}") from None


def _read_rows(path: Path, columns: Sequence[str]):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != tuple(columns):
            raise TraceError(f"{path.name} row 1: expected header {','.join(columns)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                col = columns[min(len(row), len(columns) - 1)]
                raise TraceError(f"{path.name} row {line}, column '{col}': expected {len(columns)} fields, got {len(row)}")
            yield line, row


def read_measurements(path: str | Path, deployment: Deployment) -> list[StepMeasurements]:
    path = Path(path)
    ap_ids = {ap.id for ap in deployment.aps}
    rows: dict[tuple[int, int], list] = {}
    max_t = deployment.steps - 1
    for line, row in _read_rows(path, TRACE_COLUMNS):
        t = _parse(row[0], int, path.name, line, "time_step")
        k = _parse(row[1], int, path.name, line, "ap_id")
        pid = _parse(row[2], int, path.name, line, "path_id")
        vals = [_parse(v, float, path.name, line, c) for v, c in zip(row[3:], TRACE_COLUMNS[3:])]
        if t < 0:
            raise TraceError(f"{path.name} row {line}, column 'time_step': negative step {t}")
        if k not in ap_ids:
            raise TraceError(f"{path.name} row {line}, column 'ap_id': unknown AP {k}")
        if vals[0] < 0:
            raise TraceError(f"{path.name} row {line}, column 'delay_s': negative delay")
        cov = np.empty((3, 3))
        for (a, b), v in zip(_UPPER, vals[3:]):
            cov[a, b] = cov[b, a] = v
        rows.setdefault((t, k), []).append((pid, vals[0], vals[1], vals[2], cov))
        max_t = max(max_t, t)
    steps = []
    for t in range(max_t + 1):
        per_ap = {}
        for k in sorted(ap_ids):
            items = rows.get((t, k), [])
            n = len(items)
            per_ap[k] = RangeBearingSet(
                t,
                np.full(n, k, dtype=np.int64),
                np.array([r[0] for r in items], dtype=np.int64),
                np.array([r[1] for r in items], dtype=float),
                np.array([r[2] for r in items], dtype=float),
                np.array([r[3] for r in items], dtype=float),
                np.array([r[4] for r in items], dtype=float).reshape(n, 3, 3),
            )
        steps.append(StepMeasurements(t, per_ap))
    return steps


def read_truth(path: str | Path) -> list[Trajectory]:
    path = Path(path)
    pts: dict[int, list[tuple[int, np.ndarray]]] = {}
    for line, row in _read_rows(path, TRUTH_COLUMNS):
        t = _parse(row[0], int, path.name, line, "time_step")
        u = _parse(row[1], int, path.name, line, "ue_id")
        xyz = np.array([_parse(v, float, path.name, line, c) for v, c in zip(row[2:], "xyz")])
        pts.setdefault(u, []).append((t, xyz))
    out = []
    for u in sorted(pts):
        seq = sorted(pts[u], key=lambda r: r[0])
        if [r[0] for r in seq] != list(range(len(seq))):
            raise TraceError(f"{path.name}: UE {u} does not have one row per step starting at 0")
        out.append(Trajectory(u, np.stack([r[1] for r in seq])))
    return out


def load_trace(path: str | Path) -> Trace:
    path = Path(path)
    dep_path = path / "deployment.json"
    try:
        dep = deployment_from_dict(json.loads(dep_path.read_text()))
    except FileNotFoundError:
        raise TraceError(f"{dep_path}: missing deployment file") from None
    except json.JSONDecodeError as exc:
        raise TraceError(f"{dep_path}: {exc}") from None
    steps = read_measurements(path / "measurements.csv", dep)
    truth = read_truth(path / "truth.csv") if (path / "truth.csv").exists() else None
    dep.steps = len(steps)
    return Trace(dep, steps, truth)
