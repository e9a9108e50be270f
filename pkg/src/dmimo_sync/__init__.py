"""Repeater-aided phase synchronisation for distributed MIMO access points."""

__version__ = "0.1.0"

from .montecarlo import ScenarioConfig, SweepResult, SweepRow, run_cell, run_sweep, run_trial
from .protocols import SyncOutcome, beamsync_direct, repeater_sync_noiseless

__all__ = [
    "ScenarioConfig",
    "SweepResult",
    "SweepRow",
    "SyncOutcome",
    "beamsync_direct",
    "repeater_sync_noiseless",
    "run_cell",
    "run_sweep",
    "run_trial",
]
