"""Discounted Vovk-Azoury-Warmuth forecasting with machine-checkable regret bounds."""

from .errors import NumericalError, ParameterError, ProtocolError, SchemaError
from .forecaster import DiscountedVAW, MDSnapshot, RoundOutput, ftrl_solve, init, md_step
from .hinting import RefPolicy, TrustRegion, clip, fixed_point_hint, self_confident_hint, update_radius
from .meta import ExpertsState, MetaTrace, aggregate, beta_schedule, fixed_share_update, run_clipped_meta
from .oracle import (
    BoundReport,
    ComparatorSequence,
    adversarial_stream,
    bound_fixed_share,
    bound_general_dvaw,
    discounted_objective,
    dynamic_regret,
    solve_gamma_smallloss,
    solve_gamma_star,
    variability,
)
from .stream import Stream, StreamRecord
from .tuner import (
    CoverInterval,
    DiscountGrid,
    build_grid,
    geometric_cover,
    make_bank,
    partition_interval,
    run_flat_grid,
    run_strongly_adaptive,
)

__version__ = "0.1.0"

__all__ = [
    "BoundReport",
    "ComparatorSequence",
    "CoverInterval",
    "DiscountGrid",
    "DiscountedVAW",
    "ExpertsState",
    "MDSnapshot",
    "MetaTrace",
    "NumericalError",
    "ParameterError",
    "ProtocolError",
    "RefPolicy",
    "RoundOutput",
    "SchemaError",
    "Stream",
    "StreamRecord",
    "TrustRegion",
    "adversarial_stream",
    "aggregate",
    "beta_schedule",
    "bound_fixed_share",
    "bound_general_dvaw",
    "build_grid",
    "clip",
    "discounted_objective",
    "dynamic_regret",
    "fixed_point_hint",
    "fixed_share_update",
    "ftrl_solve",
    "geometric_cover",
    "init",
    "make_bank",
    "md_step",
    "partition_interval",
    "run_clipped_meta",
    "run_flat_grid",
    "run_strongly_adaptive",
    "self_confident_hint",
    "solve_gamma_smallloss",
    "solve_gamma_star",
    "update_radius",
    "variability",
]
