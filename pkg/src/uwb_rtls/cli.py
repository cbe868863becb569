"""Command-line harness: simulate, locate, eval, deploy-check, demo.

Each subcommand reads a JSON scenario config and writes flat files
(JSON lines for radio traffic and ground truth, CSV for fixes and grids,
JSON for summaries) so runs diff cleanly and compose through the shell.

Exit codes: 0 success, 2 configuration or validation error, 3 empty
result, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, ScenarioConfig, load_config
from .deploy import build_deployment_report, grid_to_csv
from .engine import EngineParams, LocateResult, locate_reports
from .metrics import EmptyEvalError, errors_csv, evaluate
from .protocol import ReportDecodeError, ToaReport, decode_report, encode_report
from .simnet import ScenarioError, SimResult, TruthBlink, decode_truth, encode_truth, run_scenario
from .solver import Fix
from .topology import TopologyError
from .wcs import SyncedTdoa

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EMPTY = 3
EXIT_IO = 4

FIXES_HEADER = "tag_id,blink_seq,x,y,vx,vy,pos_std"
SYNCED_HEADER = "anchor_a,anchor_b,tag_id,blink_seq,tdoa_sync,k_used"


# ---------------------------------------------------------------------------
# File formats


def fixes_to_csv(fixes: Sequence[Fix]) -> str:
    lines = [FIXES_HEADER]
    for f in fixes:
        lines.append(
            f"{f.tag_id},{f.blink_seq},{f.x!r},{f.y!r},{f.vx!r},{f.vy!r},{f.pos_std!r}"
        )
    return "\n".join(lines) + "\n"


def read_fixes_csv(path: Path) -> list[Fix]:
    fixes = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            fixes.append(
                Fix(
                    tag_id=row["tag_id"],
                    blink_seq=int(row["blink_seq"]),
                    x=float(row["x"]),
                    y=float(row["y"]),
                    vx=float(row["vx"]),
                    vy=float(row["vy"]),
                    pos_std=float(row["pos_std"]),
                    residual_norm=0.0,
                )
            )
    return fixes


def synced_to_csv(synced: Sequence[SyncedTdoa]) -> str:
    lines = [SYNCED_HEADER]
    for s in synced:
        lines.append(
            f"{s.anchor_a},{s.anchor_b},{s.tag_id},{s.blink_seq},{s.tdoa_sync!r},{s.k_used!r}"
        )
    return "\n".join(lines) + "\n"


def read_synced_csv(path: Path) -> list[SyncedTdoa]:
    synced = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            synced.append(
                SyncedTdoa(
                    anchor_a=row["anchor_a"],
                    anchor_b=row["anchor_b"],
                    tag_id=row["tag_id"],
                    blink_seq=int(row["blink_seq"]),
                    tdoa_sync=float(row["tdoa_sync"]),
                    k_used=float(row["k_used"]),
                )
            )
    return synced


def read_reports(path: Path) -> tuple[list[ToaReport], int]:
    """Parse a reports.jsonl file, skipping malformed lines with a count."""
    reports = []
    skipped = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                reports.append(decode_report(line))
            except ReportDecodeError as exc:
                skipped += 1
                log.warning("reports line %d skipped: %s", lineno, exc)
    if skipped:
        log.warning("skipped %d malformed report line(s)", skipped)
    return reports, skipped


def read_truth(path: Path) -> list[TruthBlink]:
    blinks = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = decode_truth(line)
            if isinstance(record, TruthBlink):
                blinks.append(record)
    return blinks


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


# ---------------------------------------------------------------------------
# Pipeline pieces shared by subcommands


def _simulate(cfg: ScenarioConfig, out: Path, seed: int | None) -> SimResult:
    scenario = cfg.scenario
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    result = run_scenario(scenario)
    _write(out / "reports.jsonl", "".join(encode_report(r) + "\n" for r in result.reports))
    truth_lines = [encode_truth(b) for b in result.truth_blinks]
    truth_lines += [encode_truth(c) for c in result.truth_clocks]
    _write(out / "truth.jsonl", "".join(line + "\n" for line in truth_lines))
    return result


def _engine_params(cfg: ScenarioConfig) -> EngineParams:
    return EngineParams(
        ccp_period=cfg.scenario.ccp_period,
        blink_period=cfg.scenario.blink_period,
        tracker=cfg.tracker,
        k_band=cfg.wcs.k_band,
        stale_intervals=cfg.wcs.stale_intervals,
    )


def _locate(cfg: ScenarioConfig, reports: Sequence[ToaReport], out: Path) -> LocateResult:
    result = locate_reports(reports, cfg.scenario.topology, _engine_params(cfg))
    _write(out / "fixes.csv", fixes_to_csv(result.fixes))
    _write(out / "synced.csv", synced_to_csv(result.synced))
    return result


def _eval(
    cfg: ScenarioConfig,
    fixes: Sequence[Fix],
    truth: Sequence[TruthBlink],
    synced: Sequence[SyncedTdoa],
    out: Path,
) -> str:
    summary = evaluate(
        fixes,
        truth,
        synced,
        warmup=cfg.warmup,
        process_var=cfg.wcs.process_var,
        measurement_var=cfg.wcs.measurement_var,
    )
    text = summary.to_json()
    _write(out / "summary.json", text)
    _write(out / "errors.csv", errors_csv(fixes, truth))
    return text


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    _simulate(cfg, Path(args.out), args.seed)
    return EXIT_OK


def cmd_locate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    reports, _ = read_reports(Path(args.reports))
    result = _locate(cfg, reports, Path(args.out))
    if not result.fixes:
        print("error: no fixes produced from the given reports", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    fixes = read_fixes_csv(Path(args.fixes))
    truth = read_truth(Path(args.truth))
    synced = read_synced_csv(Path(args.synced)) if args.synced else []
    try:
        text = _eval(cfg, fixes, truth, synced, Path(args.out))
    except EmptyEvalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    sys.stdout.write(text)
    return EXIT_OK


def cmd_deploy_check(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    report = build_deployment_report(
        cfg.scenario.topology, area=cfg.area, resolution=args.resolution
    )
    out = Path(args.out)
    _write(out / "deploy_report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _write(out / "hdop.csv", grid_to_csv(report.hdop_rows))
    return EXIT_OK


DEMO_CONFIG = {
    "anchors": [
        {
            "id": "MA1",
            "role": "master",
            "level": 1,
            "position": [0.0, 0.0],
            "clock": {"offset": 0.0012, "skew": 8e-06, "jitter_std": 1e-10},
        },
        {
            "id": "SA2",
            "role": "slave",
            "position": [6.0, 0.0],
            "follows": ["MA1"],
            "clock": {"offset": -0.0034, "skew": -1.2e-05, "jitter_std": 1e-10},
        },
        {
            "id": "SA3",
            "role": "slave",
            "position": [6.0, 4.0],
            "follows": ["MA1"],
            "clock": {"offset": 0.0075, "skew": 2.1e-05, "jitter_std": 1e-10},
        },
        {
            "id": "SA4",
            "role": "slave",
            "position": [0.0, 4.0],
            "follows": ["MA1"],
            "clock": {"offset": -0.0006, "skew": -3.3e-05, "jitter_std": 1e-10},
        },
    ],
    "tags": [
        {"id": "T1", "trajectory": {"kind": "static", "position": [2.0, 1.5]}}
    ],
    "duration": 60.0,
    "blink_period": 0.1,
    "ccp_period": 0.15,
    "seed": 42,
    "area": [[0.0, 0.0], [6.0, 4.0]],
}


def cmd_demo(args: argparse.Namespace) -> int:
    """Full pipeline on a small rectangular deployment with one static tag."""
    out = Path(args.out)
    config_path = out / "demo_config.json"
    _write(config_path, json.dumps(DEMO_CONFIG, indent=2) + "\n")
    cfg = load_config(config_path)
    sim = _simulate(cfg, out, args.seed)
    result = _locate(cfg, sim.reports, out)
    if not result.fixes:
        print("error: demo produced no fixes", file=sys.stderr)
        return EXIT_EMPTY
    text = _eval(cfg, result.fixes, sim.truth_blinks, result.synced, out)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwb-rtls",
        description="UWB time-difference-of-arrival localization toolkit",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--verbose", action="store_true", help="chatty logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run a scenario, write radio reports")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("locate", parents=[common], help="turn ToA reports into position fixes")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--reports", required=True, help="reports.jsonl from simulate")
    p.set_defaults(handler=cmd_locate)

    p = sub.add_parser("eval", parents=[common], help="score fixes against ground truth")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--fixes", required=True, help="fixes.csv from locate")
    p.add_argument("--truth", required=True, help="truth.jsonl from simulate")
    p.add_argument("--synced", default=None, help="synced.csv from locate (optional)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("deploy-check", parents=[common], help="audit anchor placement and HDoP")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--resolution", type=float, default=0.5, help="HDoP grid step in metres")
    p.set_defaults(handler=cmd_deploy_check)

    p = sub.add_parser("demo", parents=[common], help="simulate, locate, and eval a sample room")
    p.add_argument("--seed", type=int, default=None, help="override the built-in seed")
    p.set_defaults(handler=cmd_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except (ConfigError, ScenarioError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
