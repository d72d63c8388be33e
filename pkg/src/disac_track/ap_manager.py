"""Field-of-view aware AP selection and measurement sharing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from .geometry import APState, fov_contains
from .measurement import RangeBearingSet
from .phd import UEState

PolicyKind = Literal["fov_aware", "all_active", "fixed_subset"]
Fallback = Literal["keep_previous", "all_active"]


@dataclass(frozen=True)
class ActiveSet:
    time_step: int
    ap_ids: frozenset[int]
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.ap_ids)

    @property
    def sorted_ids(self) -> list[int]:
        return sorted(self.ap_ids)


@dataclass(frozen=True)
class ManagementPolicy:
    kind: PolicyKind = "fov_aware"
    fixed_ids: frozenset[int] = field(default_factory=frozenset)
    fallback: Fallback = "keep_previous"

    def __post_init__(self):
        if self.kind not in ("fov_aware", "all_active", "fixed_subset"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.fallback not in ("keep_previous", "all_active"):
            raise ValueError(f"unknown fallback {self.fallback!r}")
        object.__setattr__(self, "fixed_ids", frozenset(int(i) for i in self.fixed_ids))
        if self.kind == "fixed_subset" and not self.fixed_ids:
            raise ValueError("fixed_subset policy needs at least one AP id")


def select_active(
    predicted: Sequence[UEState],
    aps: Sequence[APState],
    policy: ManagementPolicy,
    time_step: int = 0,
    previous: ActiveSet | None = None,
) -> ActiveSet:
    """Active AP set for one step from predicted UE positions.

    Under ``fov_aware`` an AP is active when any predicted position lies in
    its FoV. An empty result falls back to the previous set or to all APs
    (``keep_previous`` with no previous set behaves like ``all_active``), and
    the returned set is flagged.
    """
    all_ids = frozenset(ap.id for ap in aps)
    if policy.kind == "all_active":
        return ActiveSet(time_step, all_ids)
    if policy.kind == "fixed_subset":
        unknown = policy.fixed_ids - all_ids
        if unknown:
            raise ValueError(f"fixed_subset references unknown APs {sorted(unknown)}")
        return ActiveSet(time_step, policy.fixed_ids)
    ids = frozenset(ap.id for ap in aps if any(fov_contains(ap, ue.position) for ue in predicted))
    if ids:
        return ActiveSet(time_step, ids)
    if policy.fallback == "keep_previous" and previous is not None:
        return ActiveSet(time_step, previous.ap_ids, fallback=True)
    return ActiveSet(time_step, all_ids, fallback=True)


def gate_measurements(
    per_ap: Mapping[int, RangeBearingSet], active: ActiveSet | Iterable[int], time_step: int | None = None
) -> RangeBearingSet:
    """Concatenate the measurements of the active APs, ordered by (ap_id, path_id)."""
    ids = active.ap_ids if isinstance(active, ActiveSet) else frozenset(active)
    t = time_step if time_step is not None else getattr(active, "time_step", 0)
    parts = []
    for k in sorted(ids):
        part = per_ap.get(k)
        if part is None or len(part) == 0:
            continue
        order = np.argsort(part.path_id, kind="stable")
        parts.append(
            RangeBearingSet(
                part.time_step,
                part.ap_id[order],
                part.path_id[order],
                part.delay[order],
                part.elevation[order],
                part.azimuth[order],
                part.cov[order],
            )
        )
    return RangeBearingSet.concat(t, parts)
