"""Air-interface messages and the JSON-lines ToA report format.

Anchors do not exchange clock state; they only forward timestamped events to
the localization engine.  A report line carries who timestamped what:

    {"anchor_id":"SA2","kind":"blink_rx","src_id":"T1","seq":7,"ticks":12345}

``kind`` is one of ``blink_rx`` (tag blink reception), ``ccp_rx`` (clock
calibration packet reception), or ``ccp_tx`` (a master anchor's own CCP
transmission timestamp).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .clock import TICK_WRAP, Timestamp

KIND_BLINK_RX = "blink_rx"
KIND_CCP_RX = "ccp_rx"
KIND_CCP_TX = "ccp_tx"
REPORT_KINDS = (KIND_BLINK_RX, KIND_CCP_RX, KIND_CCP_TX)

# Sequence numbers are 32-bit wrapping counters.
SEQ_WRAP = 2**32


class ReportDecodeError(ValueError):
    """A report line that cannot be turned into a ToaReport."""


class MalformedReportError(ReportDecodeError):
    """Line is not a JSON object with the expected fields."""


class UnknownKindError(ReportDecodeError):
    """``kind`` is not one of the report kinds."""


class TicksRangeError(ReportDecodeError):
    """``ticks`` is outside [0, 2**40)."""


class SeqRangeError(ReportDecodeError):
    """``seq`` is negative or beyond the 32-bit counter range."""


@dataclass(frozen=True)
class BlinkMsg:
    """Positioning packet sent by a tag; the tx time never leaves the simulator."""

    tag_id: str
    seq_num: int
    tx_true_time: float


@dataclass(frozen=True)
class CcpMsg:
    """Clock calibration packet sent by a master anchor."""

    master_id: str
    seq_num: int
    tx_true_time: float


@dataclass(frozen=True)
class ToaReport:
    """One timestamped event reported by an anchor to the engine.

    ``src_id`` is the tag for ``blink_rx``, the transmitting master for
    ``ccp_rx``, and the anchor itself for ``ccp_tx``.
    """

    anchor_id: str
    kind: str
    src_id: str
    seq: int
    timestamp: Timestamp


def encode_report(report: ToaReport) -> str:
    """Render a report as one compact JSON line (no trailing newline)."""
    ticks = report.timestamp.ticks
    if isinstance(ticks, float) and ticks.is_integer():
        ticks = int(ticks)
    return json.dumps(
        {
            "anchor_id": report.anchor_id,
            "kind": report.kind,
            "src_id": report.src_id,
            "seq": report.seq,
            "ticks": ticks,
        },
        separators=(",", ":"),
    )


def decode_report(line: str) -> ToaReport:
    """Parse one JSON report line, validating kind, seq, and tick range."""
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedReportError(f"not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedReportError("report line must be a JSON object")

    missing = [k for k in ("anchor_id", "kind", "src_id", "seq", "ticks") if k not in raw]
    if missing:
        raise MalformedReportError(f"missing fields: {', '.join(missing)}")

    anchor_id = raw["anchor_id"]
    kind = raw["kind"]
    src_id = raw["src_id"]
    seq = raw["seq"]
    ticks = raw["ticks"]

    if not isinstance(anchor_id, str) or not isinstance(src_id, str):
        raise MalformedReportError("anchor_id and src_id must be strings")
    if kind not in REPORT_KINDS:
        raise UnknownKindError(f"unknown report kind {kind!r}")
    if not isinstance(seq, int) or isinstance(seq, bool):
        raise MalformedReportError("seq must be an integer")
    if seq < 0 or seq >= SEQ_WRAP:
        raise SeqRangeError(f"seq {seq} outside [0, 2**32)")
    if isinstance(ticks, bool) or not isinstance(ticks, (int, float)):
        raise MalformedReportError("ticks must be a number")
    if not 0 <= ticks < TICK_WRAP:
        raise TicksRangeError(f"ticks {ticks!r} outside [0, 2**40)")

    return ToaReport(anchor_id, kind, src_id, seq, Timestamp(float(ticks)))
