"""The central localization pipeline: ToA reports in, position fixes out.

Chains the stages: multi-master clock synchronization, per-blink time-base
selection, TDoA set assembly, and EKF tracking.  The CLI drives exactly this
function over files, so file-based and in-process runs agree measurement for
measurement.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .protocol import ToaReport
from .solver import Fix, TrackerConfig, track
from .timebase import (
    InsufficientAnchorsError,
    MIN_RECEIVERS,
    NoTimeBaseError,
    TdoaSet,
    assemble_tdoa_set,
    select_time_base,
)
from .topology import NetworkTopology
from .wcs import (
    DEFAULT_K_BAND,
    DEFAULT_STALE_INTERVALS,
    SyncedTdoa,
    multi_master_sync,
)


@dataclass(frozen=True)
class EngineParams:
    """Shared nominal parameters the engine needs about the deployment."""

    ccp_period: float = 0.15
    blink_period: float = 0.1
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    k_band: float = DEFAULT_K_BAND
    stale_intervals: float = DEFAULT_STALE_INTERVALS


@dataclass
class LocateResult:
    fixes: list[Fix]
    synced: list[SyncedTdoa]
    tdoa_sets: list[TdoaSet]
    diagnostics: dict


def locate_reports(
    reports: Iterable[ToaReport],
    topo: NetworkTopology,
    params: EngineParams = EngineParams(),
) -> LocateResult:
    """Run the whole pipeline over a report stream.

    Blinks that cannot be used (too few synchronized receivers, no valid
    time base) are skipped and counted in ``diagnostics``; everything else
    becomes one fix per blink per tag.
    """
    diagnostics: dict = {}
    synced = multi_master_sync(
        reports,
        topo,
        ccp_period=params.ccp_period,
        blink_period=params.blink_period,
        k_band=params.k_band,
        stale_intervals=params.stale_intervals,
        diagnostics=diagnostics,
    )

    per_blink: dict[tuple[str, int], list[SyncedTdoa]] = defaultdict(list)
    for s in synced:
        per_blink[(s.tag_id, s.blink_seq)].append(s)

    sets_per_tag: dict[str, list[TdoaSet]] = defaultdict(list)
    for tag_id, blink_seq in sorted(per_blink):
        group = per_blink[(tag_id, blink_seq)]
        receivers = {s.anchor_a for s in group} | {s.anchor_b for s in group}
        if len(receivers) < MIN_RECEIVERS:
            diagnostics["blinks_too_few_receivers"] = (
                diagnostics.get("blinks_too_few_receivers", 0) + 1
            )
            continue
        try:
            reference = select_time_base(receivers, topo)
            tdoa_set = assemble_tdoa_set(group, reference)
        except (NoTimeBaseError, InsufficientAnchorsError) as exc:
            key = (
                "blinks_no_time_base"
                if isinstance(exc, NoTimeBaseError)
                else "blinks_insufficient_anchors"
            )
            diagnostics[key] = diagnostics.get(key, 0) + 1
            continue
        sets_per_tag[tag_id].append(tdoa_set)

    anchors = topo.positions()
    fixes: list[Fix] = []
    tdoa_sets: list[TdoaSet] = []
    for tag_id in sorted(sets_per_tag):
        tag_sets = sets_per_tag[tag_id]
        tdoa_sets.extend(tag_sets)
        fixes.extend(track(tag_sets, anchors, params.tracker))
    return LocateResult(fixes, synced, tdoa_sets, diagnostics)
