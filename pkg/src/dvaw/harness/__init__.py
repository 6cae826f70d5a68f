"""Experiment harness: stream generators, runs, offline verification and the CLI."""

from .experiment import (
    ExperimentConfig,
    RunResult,
    TraceRow,
    VerifyResult,
    evaluate_checks,
    load_config,
    run_experiment,
    simulate,
    verify,
)
from .streams import GeneratedStream, gen_stream, piecewise_fit

__all__ = [
    "ExperimentConfig",
    "GeneratedStream",
    "RunResult",
    "TraceRow",
    "VerifyResult",
    "evaluate_checks",
    "gen_stream",
    "load_config",
    "piecewise_fit",
    "run_experiment",
    "simulate",
    "verify",
]
