"""Run configuration files (TOML or JSON).

A run config names either an inline synthetic ``scenario`` or a recorded
``trace`` directory, plus a ``tracker`` table. Every validation error names
the offending field with a dotted path such as ``scenario.aps[2].fov.d_th``.

Minimal TOML example::

    seed = 7

    [scenario]
    preset = "room"
    steps = 200

    [tracker]
    kind = "phd"
    policy = "fov_aware"
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import presets
from .ap_manager import ManagementPolicy
from .geometry import APState, FoV, rotation_from_ypr
from .measurement import SPEED_OF_LIGHT
from .phd import MotionModel
from .pipeline import TrackerConfig
from .scenario import ScenarioConfig, UEInit

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the field path."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


@dataclass
class RunConfig:
    seed: int = 0
    scenario: ScenarioConfig | None = None
    trace: Path | None = None
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    ue_inits: list[UEInit] | None = None
    name: str = "run"

    def __post_init__(self):
        if (self.scenario is None) == (self.trace is None):
            raise ConfigError("scenario", "exactly one of 'scenario' or 'trace' must be given")

    def with_seed(self, seed: int) -> RunConfig:
        scen = None if self.scenario is None else replace(self.scenario, seed=seed)
        return replace(self, seed=seed, scenario=scen)


# --- typed accessors ---------------------------------------------------------

_MISSING = object()


def _table(d: Mapping, key: str, path: str, required: bool = False) -> Mapping:
    v = d.get(key, _MISSING)
    if v is _MISSING:
        if required:
            raise ConfigError(_join(path, key), "missing required table")
        return {}
    if not isinstance(v, Mapping):
        raise ConfigError(_join(path, key), "expected a table")
    return v


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _num(d: Mapping, key: str, path: str, default: Any = _MISSING, kind=float, lo=None, hi=None,
         lo_open: bool = False):
    p = _join(path, key)
    v = d.get(key, _MISSING)
    if v is _MISSING:
        if default is _MISSING:
            raise ConfigError(p, "missing required value")
        return default
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(p, f"expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(p, f"expected an integer, got {v!r}")
        v = int(v)
    else:
        v = float(v)
        if math.isnan(v):
            raise ConfigError(p, "must not be NaN")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(p, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(p, f"must be <= {hi}, got {v}")
    return v


def _str(d: Mapping, key: str, path: str, choices, default: Any = _MISSING) -> str:
    p = _join(path, key)
    v = d.get(key, _MISSING)
    if v is _MISSING:
        if default is _MISSING:
            raise ConfigError(p, "missing required value")
        return default
    if v not in choices:
        raise ConfigError(p, f"expected one of {', '.join(map(repr, choices))}, got {v!r}")
    return v


def _bool(d: Mapping, key: str, path: str, default: bool) -> bool:
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(_join(path, key), f"expected true or false, got {v!r}")
    return v


def _array(d: Mapping, key: str, path: str, shape: tuple[int, ...], default: Any = _MISSING) -> np.ndarray:
    p = _join(path, key)
    v = d.get(key, _MISSING)
    if v is _MISSING:
        if default is _MISSING:
            raise ConfigError(p, "missing required value")
        return default
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(p, f"expected numbers, got {v!r}") from None
    if a.shape != shape:
        raise ConfigError(p, f"expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(p, "entries must be finite")
    return a


def _unknown(d: Mapping, allowed: set[str], path: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(_join(path, extra[0]), "unknown field")


# --- sections ----------------------------------------------------------------


def parse_fov(d: Mapping, path: str) -> FoV:
    if not isinstance(d, Mapping):
        raise ConfigError(path, "expected a table")
    _unknown(d, {"kind", "d_th", "theta_th", "theta_th_deg"}, path)
    kind = _str(d, "kind", path, ("sector", "sphere", "all"), "sector")
    d_th = _num(d, "d_th", path, math.inf, lo=0.0, lo_open=True)
    if "theta_th" in d and "theta_th_deg" in d:
        raise ConfigError(_join(path, "theta_th"), "give theta_th or theta_th_deg, not both")
    if "theta_th_deg" in d:
        theta = math.radians(_num(d, "theta_th_deg", path, lo=0.0, hi=180.0, lo_open=True))
    else:
        theta = _num(d, "theta_th", path, math.pi, lo=0.0, hi=math.pi, lo_open=True)
    return FoV(kind, d_th, theta)


def parse_motion(d: Mapping, path: str, default_q: float) -> MotionModel:
    _unknown(d, {"kind", "q_diag", "q", "dt"}, path)
    kind = _str(d, "kind", path, ("random_walk", "constant_velocity"), "random_walk")
    dim = 6 if kind == "constant_velocity" else 3
    dt = _num(d, "dt", path, 1.0, lo=0.0, lo_open=True)
    if "q_diag" in d and "q" in d:
        raise ConfigError(_join(path, "q"), "give q or q_diag, not both")
    if "q" in d:
        Q = _array(d, "q", path, (dim, dim))
    else:
        diag = _array(d, "q_diag", path, (dim,), np.full(dim, default_q))
        if np.any(diag < 0):
            raise ConfigError(_join(path, "q_diag"), "entries must be >= 0")
        Q = np.diag(diag)
    try:
        return MotionModel(kind, Q, dt)
    except ValueError as exc:
        raise ConfigError(_join(path, "q"), str(exc)) from None


def _rotation(a: Mapping, path: str) -> np.ndarray:
    if "rotation" in a and "yaw_pitch_roll" in a:
        raise ConfigError(_join(path, "rotation"), "give rotation or yaw_pitch_roll, not both")
    if "rotation" in a:
        return _array(a, "rotation", path, (3, 3))
    ypr = _array(a, "yaw_pitch_roll", path, (3,), np.zeros(3))
    return rotation_from_ypr(*ypr)


def parse_ap(a: Mapping, path: str) -> tuple[APState, FoV | None]:
    if not isinstance(a, Mapping):
        raise ConfigError(path, "expected a table")
    _unknown(a, {"id", "position", "rotation", "yaw_pitch_roll", "fov", "visibility"}, path)
    ap_id = _num(a, "id", path, kind=int, lo=0)
    pos = _array(a, "position", path, (3,))
    rot = _rotation(a, path)
    fov = parse_fov(a.get("fov", {}), _join(path, "fov"))
    vis = parse_fov(a["visibility"], _join(path, "visibility")) if "visibility" in a else None
    try:
        return APState(ap_id, pos, rot, fov), vis
    except ValueError as exc:
        raise ConfigError(_join(path, "rotation"), str(exc)) from None


def parse_ue(u: Mapping, path: str) -> UEInit:
    if not isinstance(u, Mapping):
        raise ConfigError(path, "expected a table")
    _unknown(u, {"id", "position", "velocity"}, path)
    return UEInit(_num(u, "id", path, kind=int, lo=0), _array(u, "position", path, (3,)),
                  _array(u, "velocity", path, (3,), np.zeros(3)))


def _ue_list(d: Mapping, key: str, path: str) -> list[UEInit]:
    raw = d.get(key, [])
    if not isinstance(raw, list):
        raise ConfigError(_join(path, key), "expected an array of tables")
    ues = [parse_ue(u, f"{_join(path, key)}[{i}]") for i, u in enumerate(raw)]
    ids = [u.id for u in ues]
    if len(set(ids)) != len(ids):
        raise ConfigError(_join(path, key), "UE ids must be unique")
    return ues


def parse_noise(d: Mapping, path: str, c: float) -> np.ndarray:
    _unknown(d, {"range_std", "elevation_std", "azimuth_std", "cov"}, path)
    if "cov" in d:
        if set(d) - {"cov"}:
            raise ConfigError(_join(path, "cov"), "cov excludes the per-axis std fields")
        return _array(d, "cov", path, (3, 3))
    return presets.noise_template(
        _num(d, "range_std", path, 0.05, lo=0.0),
        _num(d, "elevation_std", path, 0.02, lo=0.0),
        _num(d, "azimuth_std", path, 0.02, lo=0.0),
        c,
    )


_PRESET_KEYS = {"preset", "steps", "p_d", "clutter_per_ap", "noise"}
_SCENARIO_KEYS = {"steps", "p_d", "clutter_per_ap", "clutter_region", "speed_of_light", "noise", "motion",
                  "aps", "ue"}


def parse_scenario(d: Mapping, seed: int, path: str = "scenario") -> ScenarioConfig:
    if "preset" in d:
        _unknown(d, _PRESET_KEYS, path)
        name = _str(d, "preset", path, ("room", "corridor"))
        kwargs: dict = {}
        if "steps" in d:
            kwargs["steps"] = _num(d, "steps", path, kind=int, lo=1)
        if "p_d" in d:
            kwargs["p_d"] = _num(d, "p_d", path, lo=0.0, hi=1.0)
        if "clutter_per_ap" in d:
            kwargs["clutter_per_ap"] = _num(d, "clutter_per_ap", path, lo=0.0)
        if "noise" in d:
            kwargs["noise"] = parse_noise(_table(d, "noise", path), _join(path, "noise"), SPEED_OF_LIGHT)
        try:
            return getattr(presets, name)(seed=seed, **kwargs)
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None

    _unknown(d, _SCENARIO_KEYS, path)
    c = _num(d, "speed_of_light", path, SPEED_OF_LIGHT, lo=0.0, lo_open=True)
    raw_aps = d.get("aps")
    if not isinstance(raw_aps, list) or not raw_aps:
        raise ConfigError(_join(path, "aps"), "expected a non-empty array of AP tables")
    aps, visibility = [], {}
    for i, a in enumerate(raw_aps):
        ap, vis = parse_ap(a, f"{path}.aps[{i}]")
        aps.append(ap)
        if vis is not None:
            visibility[ap.id] = vis
    if len({ap.id for ap in aps}) != len(aps):
        raise ConfigError(_join(path, "aps"), "AP ids must be unique")
    ues = _ue_list(d, "ue", path)
    if not ues:
        raise ConfigError(_join(path, "ue"), "at least one UE is required")
    region = _array(d, "clutter_region", path, (3, 2))
    if np.any(region[:, 1] <= region[:, 0]):
        raise ConfigError(_join(path, "clutter_region"), "each [lo, hi] needs lo < hi")
    noise = parse_noise(_table(d, "noise", path), _join(path, "noise"), c)
    try:
        return ScenarioConfig(
            seed=seed,
            T=_num(d, "steps", path, kind=int, lo=1),
            aps=aps,
            ue_inits=ues,
            motion=parse_motion(_table(d, "motion", path), _join(path, "motion"), 0.0),
            p_d=_num(d, "p_d", path, 0.9, lo=0.0, hi=1.0),
            clutter_per_ap=_num(d, "clutter_per_ap", path, 9.0, lo=0.0),
            clutter_region=region,
            noise=noise,
            c=c,
            visibility=visibility,
        )
    except ValueError as exc:
        raise ConfigError(_join(path, "noise"), str(exc)) from None


_TRACKER_KEYS = {"kind", "policy", "fixed_ids", "fallback", "motion", "p_d", "clutter_per_ap", "clutter_intensity",
                 "prune_threshold", "merge_threshold", "max_components", "cluster_gate", "prior_std",
                 "prior_vel_std", "birth_weight", "renormalize", "nn_gate"}


def parse_tracker(d: Mapping, path: str = "tracker", clutter_default: float = 9.0) -> TrackerConfig:
    _unknown(d, _TRACKER_KEYS, path)
    kind = _str(d, "kind", path, ("phd", "kf_nn"), "phd")
    pol = _str(d, "policy", path, ("fov_aware", "all_active", "fixed_subset", "none"), "fov_aware")
    policy = None
    if pol != "none":
        raw_ids = d.get("fixed_ids", [])
        if not isinstance(raw_ids, list) or any(isinstance(i, bool) or not isinstance(i, int) for i in raw_ids):
            raise ConfigError(_join(path, "fixed_ids"), "expected an array of integer AP ids")
        if pol == "fixed_subset" and not raw_ids:
            raise ConfigError(_join(path, "fixed_ids"), "fixed_subset needs at least one AP id")
        fallback = _str(d, "fallback", path, ("keep_previous", "all_active"), "keep_previous")
        policy = ManagementPolicy(pol, frozenset(raw_ids), fallback)
    intensity = d.get("clutter_intensity")
    if intensity is not None:
        intensity = _num(d, "clutter_intensity", path, lo=0.0)
    return TrackerConfig(
        kind=kind,
        policy=policy,
        motion=parse_motion(_table(d, "motion", path), _join(path, "motion"), 0.01),
        p_d=_num(d, "p_d", path, 0.9, lo=0.0, hi=1.0),
        clutter_per_ap=_num(d, "clutter_per_ap", path, clutter_default, lo=0.0),
        clutter_intensity=intensity,
        prune_threshold=_num(d, "prune_threshold", path, 1e-4, lo=0.0),
        merge_threshold=_num(d, "merge_threshold", path, 4.0, lo=0.0),
        max_components=_num(d, "max_components", path, 500, kind=int, lo=1),
        cluster_gate=_num(d, "cluster_gate", path, 0.5, lo=0.0, lo_open=True),
        prior_std=_num(d, "prior_std", path, 0.3, lo=0.0, lo_open=True),
        prior_vel_std=_num(d, "prior_vel_std", path, 0.5, lo=0.0, lo_open=True),
        birth_weight=_num(d, "birth_weight", path, 0.0, lo=0.0),
        renormalize=_bool(d, "renormalize", path, False),
        nn_gate=_num(d, "nn_gate", path, math.inf, lo=0.0, lo_open=True),
    )


def parse_config(d: Mapping, base_dir: Path | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from an already-decoded mapping."""
    if not isinstance(d, Mapping):
        raise ConfigError("<root>", "expected a table")
    _unknown(d, {"name", "seed", "scenario", "trace", "tracker", "ue"}, "")
    seed = _num(d, "seed", "", 0, kind=int, lo=0)
    if seed >= 2**64:
        raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
    name = d.get("name", "run")
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "expected a non-empty string")
    has_scen, has_trace = "scenario" in d, "trace" in d
    if has_scen == has_trace:
        raise ConfigError("scenario", "exactly one of 'scenario' or 'trace' must be given")
    scenario = trace = None
    ue_inits = _ue_list(d, "ue", "") or None
    if has_scen:
        if ue_inits is not None:
            raise ConfigError("ue", "inline scenarios declare their UEs under scenario.ue")
        scenario = parse_scenario(_table(d, "scenario", ""), seed)
        clutter_default = scenario.clutter_per_ap
    else:
        raw = d["trace"]
        if not isinstance(raw, str) or not raw:
            raise ConfigError("trace", "expected a directory path")
        trace = Path(raw)
        if base_dir is not None and not trace.is_absolute():
            trace = base_dir / trace
        clutter_default = 9.0
    raw_tracker = d.get("tracker", {})
    if isinstance(raw_tracker, str):
        raw_tracker = {"kind": raw_tracker}  # shorthand: tracker = "kf_nn"
    if not isinstance(raw_tracker, Mapping):
        raise ConfigError("tracker", "expected a table or a tracker name")
    tracker = parse_tracker(raw_tracker, "tracker", clutter_default)
    return RunConfig(seed, scenario, trace, tracker, ue_inits, name)


def load_config(path: str | Path) -> RunConfig:
    """Read a ``.toml`` or ``.json`` run config; relative trace paths resolve
    against the config file's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read ({exc.strerror})") from None
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from None
    return parse_config(data, path.parent)
