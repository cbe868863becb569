"""End-to-end pipeline: simulated reports through to position fixes."""

from __future__ import annotations

import math
import random

from uwb_rtls.engine import EngineParams, locate_reports
from uwb_rtls.simnet import Scenario, StaticTrajectory, TagSpec, run_scenario
from uwb_rtls.solver import TrackerConfig

from conftest import build_ideal_rect_topology, build_rect_topology


def _run(topo, duration=3.0, tag_xy=(2.0, 1.5), **scenario_kw):
    scn = Scenario(
        topology=topo,
        tags=(TagSpec("T1", StaticTrajectory(tag_xy)),),
        duration=duration,
        **scenario_kw,
    )
    return run_scenario(scn)


def test_zero_noise_run_localizes_to_under_a_millimeter():
    topo = build_rect_topology()  # offsets and skews, no jitter
    sim = _run(topo, duration=3.0, tag_xy=(2.0, 1.5))
    result = locate_reports(sim.reports, topo)
    truth = {b.seq: b for b in sim.truth_blinks}
    assert len(result.fixes) >= 25
    for fix in result.fixes:
        b = truth[fix.blink_seq]
        assert math.dist((fix.x, fix.y), (b.x, b.y)) < 1e-3


def test_report_order_does_not_matter():
    topo = build_rect_topology(jitter_std=1e-10)
    sim = _run(topo, duration=2.0)
    forward = locate_reports(sim.reports, topo)
    shuffled = list(sim.reports)
    random.Random(7).shuffle(shuffled)
    scrambled = locate_reports(shuffled, topo)
    assert scrambled.fixes == forward.fixes
    assert sorted(scrambled.synced, key=lambda s: (s.blink_seq, s.anchor_a, s.anchor_b)) == sorted(
        forward.synced, key=lambda s: (s.blink_seq, s.anchor_a, s.anchor_b)
    )


def test_three_receivers_yield_no_fix_but_a_diagnostic():
    topo = build_ideal_rect_topology()
    sim = _run(topo, duration=1.0, blink_links={"T1": frozenset({"MA1", "SA2", "SA3"})})
    result = locate_reports(sim.reports, topo)
    assert result.fixes == []
    assert result.diagnostics["blinks_too_few_receivers"] == 10


def test_tracker_config_is_honored():
    topo = build_rect_topology(jitter_std=1e-10)
    sim = _run(topo, duration=2.0)
    loose = locate_reports(sim.reports, topo)
    pinned = locate_reports(
        sim.reports,
        topo,
        EngineParams(tracker=TrackerConfig(sigma_accel=1e-3)),
    )
    assert len(pinned.fixes) == len(loose.fixes)
    assert pinned.fixes != loose.fixes


def test_diagnostics_count_every_report():
    topo = build_rect_topology()
    sim = _run(topo, duration=1.0)
    result = locate_reports(sim.reports, topo)
    assert result.diagnostics["reports"] == len(sim.reports)
    assert result.diagnostics.get("unknown_anchor_reports", 0) == 0


def test_fixes_carry_tag_and_sequence_metadata():
    topo = build_rect_topology()
    sim = _run(topo, duration=1.0)
    result = locate_reports(sim.reports, topo)
    assert all(f.tag_id == "T1" for f in result.fixes)
    seqs = [f.blink_seq for f in result.fixes]
    assert seqs == sorted(seqs)
