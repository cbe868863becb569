"""UWB time-difference-of-arrival real-time localization.

Simulates an anchor/tag radio network with imperfect clocks, synchronizes
the resulting timestamps in software, solves tag positions, and audits
anchor deployments.
"""

from .clock import ClockModel, Timestamp, read_clock, ts_diff
from .config import ConfigError, ScenarioConfig, load_config
from .engine import EngineParams, LocateResult, locate_reports
from .metrics import EvalSummary, evaluate
from .protocol import ToaReport, decode_report, encode_report
from .simnet import Scenario, SimResult, TagSpec, run_scenario
from .solver import Fix, TrackerConfig, ls_solve, track
from .timebase import TdoaSet, assemble_tdoa_set, select_time_base
from .topology import AnchorConfig, NetworkTopology
from .wcs import SyncedTdoa, multi_master_sync, scale_coefficient, sync_tdoa

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig",
    "ClockModel",
    "ConfigError",
    "EngineParams",
    "EvalSummary",
    "Fix",
    "LocateResult",
    "NetworkTopology",
    "Scenario",
    "ScenarioConfig",
    "SimResult",
    "SyncedTdoa",
    "TagSpec",
    "TdoaSet",
    "Timestamp",
    "ToaReport",
    "TrackerConfig",
    "assemble_tdoa_set",
    "decode_report",
    "encode_report",
    "evaluate",
    "load_config",
    "locate_reports",
    "ls_solve",
    "multi_master_sync",
    "read_clock",
    "run_scenario",
    "scale_coefficient",
    "select_time_base",
    "sync_tdoa",
    "track",
    "ts_diff",
    "__version__",
]
