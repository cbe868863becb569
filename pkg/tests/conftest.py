"""Shared builders for the test suite.

Most tests exercise a 6 m x 4 m rectangular room with a master anchor at
the origin and slaves on the remaining corners, so those pieces live here.
"""

from __future__ import annotations

import pytest

from uwb_rtls.clock import ClockModel, IDEAL_CLOCK
from uwb_rtls.topology import AnchorConfig, NetworkTopology

RECT_POSITIONS = {
    "MA1": (0.0, 0.0),
    "SA2": (6.0, 0.0),
    "SA3": (6.0, 4.0),
    "SA4": (0.0, 4.0),
}

# Arbitrary but fixed imperfections, well inside the +/-100 ppm skew limit.
RECT_CLOCKS = {
    "MA1": ClockModel(offset=0.0012, skew=8e-6),
    "SA2": ClockModel(offset=-0.0034, skew=-1.2e-5),
    "SA3": ClockModel(offset=0.0075, skew=2.1e-5),
    "SA4": ClockModel(offset=-0.0006, skew=-3.3e-5),
}


def build_rect_topology(
    clocks: dict[str, ClockModel] | None = None,
    jitter_std: float = 0.0,
) -> NetworkTopology:
    """Single-master rectangle; optional clock overrides and jitter."""
    anchors = []
    for anchor_id, position in RECT_POSITIONS.items():
        overrides = RECT_CLOCKS if clocks is None else clocks
        clock = overrides.get(anchor_id, IDEAL_CLOCK)
        if jitter_std:
            clock = ClockModel(
                offset=clock.offset,
                skew=clock.skew,
                drift_rate=clock.drift_rate,
                jitter_std=jitter_std,
            )
        role = "master" if anchor_id == "MA1" else "slave"
        anchors.append(AnchorConfig(id=anchor_id, role=role, position=position, clock=clock))
    return NetworkTopology(
        anchors=tuple(anchors),
        follow={a: frozenset({"MA1"}) for a in RECT_POSITIONS if a != "MA1"},
        master_level={"MA1": 1},
    )


def build_ideal_rect_topology() -> NetworkTopology:
    return build_rect_topology(clocks={})


@pytest.fixture
def rect_topology() -> NetworkTopology:
    return build_rect_topology()


@pytest.fixture
def ideal_rect_topology() -> NetworkTopology:
    return build_ideal_rect_topology()
