"""Benchmark harness: trial runner, metrics and exporters."""
from __future__ import annotations

from .export import REFERENCE_ROWS, REFERENCE_STEPS, export, load_reports, markdown_table
from .metrics import MetricsError, Report, compute, mean_ci, trial_surviving_rate
from .runner import (STAGES, CountingReasoner, EpisodeRecord, RunConfig, TrialResult, load_results, run, run_one,
                     save_results)

__all__ = [
    "REFERENCE_ROWS", "REFERENCE_STEPS", "STAGES", "CountingReasoner", "EpisodeRecord", "MetricsError", "Report",
    "RunConfig", "TrialResult", "compute", "export", "load_reports", "load_results", "markdown_table", "mean_ci",
    "run", "run_one", "save_results", "trial_surviving_rate",
]
