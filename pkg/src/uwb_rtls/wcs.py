"""Wireless clock synchronization.

Anchors never adjust their counters; the engine removes clock disagreement
after the fact using clock calibration packets (CCPs).  A pair of consecutive
CCPs seen on both the master's transmit side and a receiver's side gives the
scale coefficient

    K = (T_s1 - T_s2) / (R_s1 - R_s2)

the ratio of the two clock rates over one CCP interval.  Because the CCP
round schedule is periodic with a known nominal interval, the same window
also calibrates each clock against that schedule, which is what lets a tag
blink timestamped on several free-running counters be mapped onto one common
timescale.  Multi-master cascades compose these per-hop corrections along
the follow chain, so any two anchors in a connected topology can be
differenced.

The output is one ``SyncedTdoa`` per anchor pair per blink, in seconds on
the common timescale, with CCP propagation between anchors (a known baseline
over c) already removed.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable

from .clock import TICK_SECONDS, Timestamp, ts_diff
from .constants import SPEED_OF_LIGHT
from .protocol import KIND_BLINK_RX, KIND_CCP_RX, KIND_CCP_TX, ToaReport
from .topology import NetworkTopology, ROLE_MASTER

log = logging.getLogger(__name__)

# Reject windows implying more than 100 ppm of relative rate error.
DEFAULT_K_BAND = 1e-4
# Windows farther than this many CCP intervals from the blink are stale.
DEFAULT_STALE_INTERVALS = 2.0

# Scalar smoother defaults: a static pair's TDoA wanders slowly (clock
# residuals), while a single measurement is good to about half a nanosecond.
DEFAULT_PROCESS_VAR = 1e-22  # s^2 added per step
DEFAULT_MEASUREMENT_VAR = (0.5e-9) ** 2  # s^2


class SyncError(RuntimeError):
    """Raised when raw timestamps cannot be placed on the common timescale."""


class DegenerateWindowError(SyncError):
    """CCP window with repeated or non-advancing timestamps."""


class DriftAnomalyError(SyncError):
    """Window implies a clock rate outside the sanity band."""


class UnsynchronizedAnchorError(SyncError):
    """No usable CCP window exists for an anchor."""


class StaleSyncError(SyncError):
    """Nearest CCP window is too old (or too far ahead) to trust."""


@dataclass(frozen=True)
class CcpPairWindow:
    """Timestamps of two consecutive CCPs (sequence ``seq`` and ``seq + 1``):
    the master's transmit readings and one receiver's arrival readings."""

    master_id: str
    sa_id: str
    seq: int
    t_s1: Timestamp
    t_s2: Timestamp
    r_s1: Timestamp
    r_s2: Timestamp


@dataclass(frozen=True)
class SyncedTdoa:
    """Corrected arrival-time difference of one blink between two anchors.

    ``tdoa_sync`` is (arrival at ``anchor_a``) minus (arrival at
    ``anchor_b``) in seconds on the common timescale; ``k_used`` is the
    rate ratio applied between the two anchors' clocks.
    """

    anchor_a: str
    anchor_b: str
    tag_id: str
    blink_seq: int
    tdoa_sync: float
    k_used: float

    def signed(self, first: str, second: str) -> float:
        """The TDoA oriented as (first minus second)."""
        if (first, second) == (self.anchor_a, self.anchor_b):
            return self.tdoa_sync
        if (first, second) == (self.anchor_b, self.anchor_a):
            return -self.tdoa_sync
        raise KeyError(f"pair ({first}, {second}) not covered by this measurement")


def scale_coefficient(window: CcpPairWindow, k_band: float = DEFAULT_K_BAND) -> float:
    """Clock-rate ratio master/receiver measured over one CCP window.

    Both tick differences are taken first-minus-second, so numerator and
    denominator are negative for consecutive CCPs and K comes out positive,
    within ``1 +/- k_band`` for healthy crystals.
    """
    num = ts_diff(window.t_s1, window.t_s2)
    den = ts_diff(window.r_s1, window.r_s2)
    if den == 0.0:
        raise DegenerateWindowError(
            f"window {window.master_id}->{window.sa_id} seq {window.seq}: "
            "receiver timestamps do not advance"
        )
    if num >= 0.0 or den >= 0.0:
        raise DegenerateWindowError(
            f"window {window.master_id}->{window.sa_id} seq {window.seq}: "
            "timestamps are not consecutive"
        )
    k = num / den
    if abs(k - 1.0) > k_band:
        raise DriftAnomalyError(
            f"window {window.master_id}->{window.sa_id} seq {window.seq}: "
            f"K = {k!r} outside 1 +/- {k_band}"
        )
    return k


def _tx_rate(window: CcpPairWindow, ccp_period: float) -> float:
    """Master device-seconds per schedule second over the window."""
    return ts_diff(window.t_s2, window.t_s1) * TICK_SECONDS / ccp_period


def _rx_rate(window: CcpPairWindow, ccp_period: float) -> float:
    """Receiver device-seconds per schedule second over the window."""
    return ts_diff(window.r_s2, window.r_s1) * TICK_SECONDS / ccp_period


def _receiver_offset(
    blink_rx: Timestamp, window: CcpPairWindow, ccp_period: float, baseline_m: float
) -> float:
    """Blink arrival at the window's receiver, in seconds after the master's
    ``seq``-th CCP transmission on the common timescale."""
    gap = ts_diff(blink_rx, window.r_s1) * TICK_SECONDS
    return gap / _rx_rate(window, ccp_period) + baseline_m / SPEED_OF_LIGHT


def _master_offset(blink_rx: Timestamp, window: CcpPairWindow, ccp_period: float) -> float:
    """Blink arrival at the master itself, in seconds after its own
    ``seq``-th CCP transmission on the common timescale."""
    gap = ts_diff(blink_rx, window.t_s1) * TICK_SECONDS
    return gap / _tx_rate(window, ccp_period)


def _check_stale(
    blink_rx: Timestamp,
    epoch: Timestamp,
    ccp_period: float,
    stale_intervals: float,
    what: str,
) -> None:
    age = abs(ts_diff(blink_rx, epoch)) * TICK_SECONDS
    if age > stale_intervals * ccp_period:
        raise StaleSyncError(
            f"{what}: window is {age:.3f} s from the blink "
            f"(limit {stale_intervals} CCP intervals)"
        )


def sync_tdoa(
    raw_rx_sa: Timestamp,
    raw_rx_ma: Timestamp,
    window: CcpPairWindow,
    *,
    baseline_m: float,
    ccp_period: float,
    tag_id: str = "",
    blink_seq: int = 0,
    k_band: float = DEFAULT_K_BAND,
    stale_intervals: float = DEFAULT_STALE_INTERVALS,
) -> SyncedTdoa:
    """Correct one blink's raw timestamps on a slave/master pair into a TDoA.

    ``window`` must belong to the same pair: master transmit timestamps and
    the slave's receive timestamps of two consecutive CCPs.  ``baseline_m``
    is the known distance between the two anchors, used to remove the CCP's
    own time of flight.  The result is in seconds on the common timescale:
    positive when the blink reached the slave later than the master.
    """
    k = scale_coefficient(window, k_band)
    _check_stale(
        raw_rx_sa, window.r_s1, ccp_period, stale_intervals,
        f"blink {tag_id!r}#{blink_seq} at {window.sa_id}",
    )
    rel_sa = _receiver_offset(raw_rx_sa, window, ccp_period, baseline_m)
    rel_ma = _master_offset(raw_rx_ma, window, ccp_period)
    return SyncedTdoa(
        anchor_a=window.sa_id,
        anchor_b=window.master_id,
        tag_id=tag_id,
        blink_seq=blink_seq,
        tdoa_sync=rel_sa - rel_ma,
        k_used=k,
    )


# ---------------------------------------------------------------------------
# Scalar per-pair smoothing


@dataclass(frozen=True)
class TdoaKalman:
    """Scalar constant-state Kalman filter tracking one anchor pair's TDoA.

    The default infinite prior variance makes the first update adopt the
    measurement outright.
    """

    state: float = 0.0
    variance: float = math.inf
    process_var: float = DEFAULT_PROCESS_VAR
    measurement_var: float = DEFAULT_MEASUREMENT_VAR


def kalman_smooth(f: TdoaKalman, measurement: float) -> TdoaKalman:
    """One predict/update step; non-finite measurements are rejected unchanged."""
    if not math.isfinite(measurement):
        return f
    variance = f.variance + f.process_var
    if math.isinf(variance):
        # Limit of gain -> 1: adopt the measurement, keep its own variance.
        return replace(f, state=measurement, variance=f.measurement_var)
    gain = variance / (variance + f.measurement_var)
    state = f.state + gain * (measurement - f.state)
    return replace(f, state=state, variance=(1.0 - gain) * variance)


# ---------------------------------------------------------------------------
# Full-report synchronization across a (possibly multi-master) topology


class _EpochTrack:
    """Nearest-epoch lookup over a seq-ordered list of (seq, Timestamp, item).

    Tick comparisons are only trustworthy within the wrap-safe range, so the
    search is seeded from the nominal schedule (CCP seq near a given blink
    seq) and refined locally; per-tag cursors then advance monotonically as
    each tag's blinks are processed in time order.
    """

    def __init__(self, entries: list[tuple[int, Timestamp, object]]) -> None:
        self.entries = entries
        self.seqs = [seq for seq, _, _ in entries]
        self.cursors: dict[str, int] = {}

    def nearest(self, tag_id: str, stamp: Timestamp, seq_hint: int) -> tuple[int, Timestamp, object]:
        entries = self.entries
        i = self.cursors.get(tag_id)
        if i is None:
            i = min(bisect.bisect_left(self.seqs, seq_hint), len(entries) - 1)
        best = abs(ts_diff(stamp, entries[i][1]))
        moved = True
        while moved:
            moved = False
            if i + 1 < len(entries):
                ahead = abs(ts_diff(stamp, entries[i + 1][1]))
                if ahead <= best:
                    i, best, moved = i + 1, ahead, True
                    continue
            if i > 0:
                behind = abs(ts_diff(stamp, entries[i - 1][1]))
                if behind < best:
                    i, best, moved = i - 1, behind, True
        self.cursors[tag_id] = i
        return entries[i]


def _dedupe(reports: Iterable[ToaReport], diag: dict) -> dict:
    """Index reports by (anchor, kind, src, seq), keeping the smallest tick
    value when duplicates conflict so results stay order-independent."""
    index: dict[tuple, Timestamp] = {}
    count = 0
    for r in reports:
        count += 1
        key = (r.anchor_id, r.kind, r.src_id, r.seq)
        held = index.get(key)
        if held is None or r.timestamp.ticks < held.ticks:
            if held is not None:
                diag["duplicate_reports"] = diag.get("duplicate_reports", 0) + 1
            index[key] = r.timestamp
        elif held is not None:
            diag["duplicate_reports"] = diag.get("duplicate_reports", 0) + 1
    diag["reports"] = diag.get("reports", 0) + count
    return index


def multi_master_sync(
    reports: Iterable[ToaReport],
    topo: NetworkTopology,
    *,
    ccp_period: float,
    blink_period: float = 0.1,
    k_band: float = DEFAULT_K_BAND,
    stale_intervals: float = DEFAULT_STALE_INTERVALS,
    diagnostics: dict | None = None,
) -> list[SyncedTdoa]:
    """Correct every blink in a report stream onto the common timescale.

    Works for single-master and cascaded multi-master topologies alike: each
    receiving anchor's blink timestamp is mapped through its own CCP windows
    (nearest window wins), lower-level masters are chained to the primary
    through their own CCP receive/transmit pairs, and one ``SyncedTdoa`` is
    emitted per unordered anchor pair per blink.  Anchors without a usable
    window are skipped and counted in ``diagnostics``.  ``blink_period`` is
    only a search hint pairing blinks with nearby CCP rounds; correction
    itself never assumes when tags transmit.

    Results depend only on the multiset of reports, not their order.
    """
    diag = diagnostics if diagnostics is not None else {}
    topo.validate()

    roles = {a.id: a.role for a in topo.anchors}
    known = set(topo.ids())
    index = _dedupe(reports, diag)

    ccp_tx: dict[str, dict[int, Timestamp]] = {}
    ccp_rx: dict[tuple[str, str], dict[int, Timestamp]] = {}
    blink_rx: dict[tuple[str, int], dict[str, Timestamp]] = {}
    for (anchor_id, kind, src_id, seq), stamp in index.items():
        if anchor_id not in known:
            diag["unknown_anchor_reports"] = diag.get("unknown_anchor_reports", 0) + 1
            continue
        if kind == KIND_CCP_TX:
            if roles.get(anchor_id) != ROLE_MASTER or src_id != anchor_id:
                diag["ccp_tx_from_non_master"] = diag.get("ccp_tx_from_non_master", 0) + 1
                continue
            ccp_tx.setdefault(anchor_id, {})[seq] = stamp
        elif kind == KIND_CCP_RX:
            if src_id not in known or roles.get(src_id) != ROLE_MASTER:
                diag["ccp_rx_unknown_master"] = diag.get("ccp_rx_unknown_master", 0) + 1
                continue
            ccp_rx.setdefault((anchor_id, src_id), {})[seq] = stamp
        else:
            blink_rx.setdefault((src_id, seq), {})[anchor_id] = stamp

    # CCP windows per (receiver, master): consecutive sequence numbers only.
    windows: dict[tuple[str, str], list[CcpPairWindow]] = {}
    for (rx_anchor, master), arrivals in ccp_rx.items():
        tx = ccp_tx.get(master, {})
        built = []
        for seq in sorted(arrivals):
            if seq + 1 in arrivals and seq in tx and seq + 1 in tx:
                w = CcpPairWindow(
                    master_id=master,
                    sa_id=rx_anchor,
                    seq=seq,
                    t_s1=tx[seq],
                    t_s2=tx[seq + 1],
                    r_s1=arrivals[seq],
                    r_s2=arrivals[seq + 1],
                )
                try:
                    scale_coefficient(w, k_band)
                except SyncError:
                    diag["rejected_windows"] = diag.get("rejected_windows", 0) + 1
                    continue
                built.append(w)
        if built:
            windows[(rx_anchor, master)] = built

    # Master transmit-side rate windows: (seq, own tx stamps of seq and seq+1).
    tx_rates: dict[str, dict[int, float]] = {}
    tx_epochs: dict[str, list[tuple[int, Timestamp]]] = {}
    for master, stamps in ccp_tx.items():
        seqs = sorted(stamps)
        tx_epochs[master] = [(s, stamps[s]) for s in seqs]
        rates = {}
        for s in seqs:
            if s + 1 in stamps:
                rate = ts_diff(stamps[s + 1], stamps[s]) * TICK_SECONDS / ccp_period
                if rate <= 0.0 or abs(rate - 1.0) > k_band:
                    diag["rejected_windows"] = diag.get("rejected_windows", 0) + 1
                    continue
                rates[s] = rate
        tx_rates[master] = rates

    def master_rate(master: str, seq: int) -> float | None:
        rates = tx_rates.get(master, {})
        return rates.get(seq, rates.get(seq - 1))

    # Offset of each master's seq-s CCP transmission from the primary's, on
    # the common timescale.  Chained through the master's own reception of
    # its upper master's CCP; the chain bottoms out at the primary (0.0).
    primary = topo.primary_master()
    delta_cache: dict[tuple[str, int], float | None] = {}

    def cascade_delta(master: str, seq: int) -> float | None:
        if master == primary:
            return 0.0
        key = (master, seq)
        if key in delta_cache:
            return delta_cache[key]
        result = None
        upper_set = topo.follow.get(master, frozenset())
        if len(upper_set) == 1:
            (upper,) = upper_set
            own_tx = ccp_tx.get(master, {}).get(seq)
            upper_rx = ccp_rx.get((master, upper), {}).get(seq)
            rate = master_rate(master, seq)
            up = cascade_delta(upper, seq)
            if own_tx is not None and upper_rx is not None and rate is not None and up is not None:
                turnaround = ts_diff(own_tx, upper_rx) * TICK_SECONDS / rate
                result = turnaround + topo.baseline(upper, master) / SPEED_OF_LIGHT + up
        delta_cache[key] = result
        return result

    # Cursors for nearest-window lookup, keyed per (anchor, master).
    rx_tracks = {
        pair: _EpochTrack([(w.seq, w.r_s1, w) for w in ws]) for pair, ws in windows.items()
    }
    tx_tracks = {
        m: _EpochTrack([(s, stamp, None) for s, stamp in eps])
        for m, eps in tx_epochs.items()
        if eps
    }

    def _bump(key: str) -> None:
        diag[key] = diag.get(key, 0) + 1

    def anchor_offset(
        anchor_id: str, tag_id: str, stamp: Timestamp, seq_hint: int
    ) -> tuple[float, int, float] | None:
        """(offset after the used CCP seq, that seq, clock rate) or None."""
        if roles[anchor_id] == ROLE_MASTER:
            track = tx_tracks.get(anchor_id)
            if track is None:
                _bump("unsynchronized_blinks")
                return None
            seq, epoch, _ = track.nearest(tag_id, stamp, seq_hint)
            rate = master_rate(anchor_id, seq)
            base = cascade_delta(anchor_id, seq)
            if rate is None or base is None:
                _bump("unsynchronized_blinks")
                return None
            if abs(ts_diff(stamp, epoch)) * TICK_SECONDS > stale_intervals * ccp_period:
                _bump("stale_blinks")
                return None
            return ts_diff(stamp, epoch) * TICK_SECONDS / rate + base, seq, rate

        saw_window = saw_fresh = False
        for master in sorted(topo.follow.get(anchor_id, frozenset())):
            track = rx_tracks.get((anchor_id, master))
            if track is None:
                continue
            saw_window = True
            seq, epoch, window = track.nearest(tag_id, stamp, seq_hint)
            if abs(ts_diff(stamp, epoch)) * TICK_SECONDS > stale_intervals * ccp_period:
                continue
            saw_fresh = True
            base = cascade_delta(master, seq)
            if base is None:
                continue
            offset = (
                _receiver_offset(stamp, window, ccp_period, topo.baseline(master, anchor_id))
                + base
            )
            return offset, seq, _rx_rate(window, ccp_period)
        if saw_window and not saw_fresh:
            _bump("stale_blinks")
        else:
            _bump("unsynchronized_blinks")
        return None

    synced: list[SyncedTdoa] = []
    for (tag_id, seq) in sorted(blink_rx):
        arrivals = blink_rx[(tag_id, seq)]
        seq_hint = int(seq * blink_period / ccp_period) if blink_period else 0
        corrected: dict[str, tuple[float, int, float]] = {}
        for anchor_id in sorted(arrivals):
            got = anchor_offset(anchor_id, tag_id, arrivals[anchor_id], seq_hint)
            if got is not None:
                corrected[anchor_id] = got
        ids = sorted(corrected)
        for i, a in enumerate(ids):
            off_a, seq_a, rate_a = corrected[a]
            for b in ids[i + 1 :]:
                off_b, seq_b, rate_b = corrected[b]
                tdoa = (off_a - off_b) + (seq_a - seq_b) * ccp_period
                synced.append(
                    SyncedTdoa(
                        anchor_a=a,
                        anchor_b=b,
                        tag_id=tag_id,
                        blink_seq=seq,
                        tdoa_sync=tdoa,
                        k_used=rate_b / rate_a,
                    )
                )
    return synced
