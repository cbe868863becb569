"""Anchor roles, positions, and the master cascade follow graph.

A deployment has exactly one primary master anchor (level 1).  Larger sites
add further masters in levels: every level-k master listens to exactly one
master of level k-1 and re-broadcasts clock calibration packets after its
own lag slot.  Slave anchors follow one or more masters; a slave following
two masters bridges their cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .clock import IDEAL_CLOCK, ClockModel

ROLE_MASTER = "master"
ROLE_SLAVE = "slave"


class TopologyError(ValueError):
    """The anchor network description is structurally invalid."""


class UnsyncableAnchorError(TopologyError):
    """Some anchors have no follow chain reaching the primary master."""

    def __init__(self, anchors) -> None:
        self.anchors = tuple(sorted(anchors))
        super().__init__(
            "anchors cannot be synchronized to the primary master: "
            + ", ".join(self.anchors)
        )


@dataclass(frozen=True)
class AnchorConfig:
    """Static description of one anchor.

    ``position`` is (x, y) or (x, y, z) in meters; solving is planar, the
    optional height is used by deployment rule checks only.  ``clock`` is
    the simulator-side truth and is never visible to the engine.
    """

    id: str
    role: str
    position: tuple[float, ...]
    clock: ClockModel = IDEAL_CLOCK

    def __post_init__(self) -> None:
        if self.role not in (ROLE_MASTER, ROLE_SLAVE):
            raise TopologyError(f"anchor {self.id!r}: unknown role {self.role!r}")
        if len(self.position) not in (2, 3):
            raise TopologyError(f"anchor {self.id!r}: position must be (x, y) or (x, y, z)")
        if not all(math.isfinite(c) for c in self.position):
            raise TopologyError(f"anchor {self.id!r}: position must be finite")
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    def xy(self) -> tuple[float, float]:
        return self.position[0], self.position[1]

    def height(self) -> float:
        return self.position[2] if len(self.position) == 3 else 0.0


@dataclass(frozen=True)
class NetworkTopology:
    """The anchor set plus who follows whom in the CCP cascade.

    follow        anchor id -> ids of the masters it listens to
    master_level  master id -> cascade level (primary master is level 1)
    lag_slots     master id -> CCP re-broadcast slot within a round
    """

    anchors: tuple[AnchorConfig, ...]
    follow: Mapping[str, frozenset[str]]
    master_level: Mapping[str, int]
    lag_slots: Mapping[str, int] = field(default_factory=dict)
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(
            self, "follow", {a: frozenset(m) for a, m in dict(self.follow).items()}
        )
        object.__setattr__(self, "master_level", dict(self.master_level))
        object.__setattr__(self, "lag_slots", dict(self.lag_slots))
        object.__setattr__(self, "_by_id", {a.id: a for a in self.anchors})
        self.validate()

    # -- lookups -----------------------------------------------------------

    def anchor(self, anchor_id: str) -> AnchorConfig:
        return self._by_id[anchor_id]

    def ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.anchors)

    def masters(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.anchors if a.role == ROLE_MASTER)

    def slaves(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.anchors if a.role == ROLE_SLAVE)

    def primary_master(self) -> str:
        for m, level in self.master_level.items():
            if level == 1:
                return m
        raise TopologyError("no level-1 master")  # unreachable after validate()

    def is_single_master(self) -> bool:
        return len(self.masters()) == 1

    def upper_master(self, master_id: str) -> str | None:
        """The master a level-k (k >= 2) master listens to; None for the
        primary."""
        followed = self.follow.get(master_id)
        if not followed:
            return None
        (upper,) = followed
        return upper

    def positions(self) -> dict[str, tuple[float, float]]:
        return {a.id: a.xy() for a in self.anchors}

    def baseline(self, a: str, b: str) -> float:
        """Planar distance between two anchors, meters."""
        ax, ay = self.anchor(a).xy()
        bx, by = self.anchor(b).xy()
        return math.hypot(ax - bx, ay - by)

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        ids = [a.id for a in self.anchors]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise TopologyError(f"duplicate anchor ids: {', '.join(dupes)}")

        masters = set(self.masters())
        slaves = set(self.slaves())

        if set(self.master_level) != masters:
            raise TopologyError("master_level keys must be exactly the master anchors")
        primaries = [m for m, lvl in self.master_level.items() if lvl == 1]
        if len(primaries) != 1:
            raise TopologyError(f"exactly one level-1 master required, found {len(primaries)}")
        for m, lvl in self.master_level.items():
            if not isinstance(lvl, int) or lvl < 1:
                raise TopologyError(f"master {m!r}: level must be a positive integer")

        for anchor_id, followed in self.follow.items():
            if anchor_id not in self._by_id:
                raise TopologyError(f"follow map references unknown anchor {anchor_id!r}")
            unknown = followed - masters
            if unknown:
                raise TopologyError(
                    f"anchor {anchor_id!r} follows non-master ids: {', '.join(sorted(unknown))}"
                )

        for m in masters:
            if self.master_level[m] == 1:
                if self.follow.get(m):
                    raise TopologyError(f"primary master {m!r} must not follow anyone")
                continue
            followed = self.follow.get(m, frozenset())
            if len(followed) > 1:
                raise TopologyError(
                    f"master {m!r} (level {self.master_level[m]}) must follow exactly one master"
                )
            if len(followed) == 1:
                (upper,) = followed
                if self.master_level[upper] != self.master_level[m] - 1:
                    raise TopologyError(
                        f"master {m!r} must follow a level-{self.master_level[m] - 1} master"
                    )
            # A non-primary master with no follow edge is handled below as a
            # connectivity orphan, not a structural error.

        for m in masters:
            slot = self.lag_slots.get(m, 0)
            if not isinstance(slot, int) or slot < 0:
                raise TopologyError(f"master {m!r}: lag slot must be a non-negative integer")
        by_upper: dict[str, list[str]] = {}
        for m in masters:
            if self.master_level[m] > 1 and len(self.follow.get(m, frozenset())) == 1:
                by_upper.setdefault(self.upper_master(m), []).append(m)
        for upper, group in by_upper.items():
            slots = [self.lag_slots.get(m, 0) for m in group]
            if len(set(slots)) != len(slots):
                raise TopologyError(
                    f"masters following {upper!r} must use distinct lag slots"
                )

        # Connectivity: every anchor must reach the primary through its
        # follow chain; anything else cannot be put on the common timescale.
        reachable = {m for m, lvl in self.master_level.items() if lvl == 1}
        for m in sorted(masters - reachable, key=lambda x: self.master_level[x]):
            followed = self.follow.get(m, frozenset())
            if len(followed) == 1 and next(iter(followed)) in reachable:
                reachable.add(m)
        orphans = []
        for m in sorted(masters):
            if m not in reachable:
                orphans.append(m)
        for s in sorted(slaves):
            followed = self.follow.get(s, frozenset())
            if not followed or not (followed & reachable):
                orphans.append(s)
        if orphans:
            raise UnsyncableAnchorError(orphans)
