"""Adaptive fixed-share aggregation with range clipping.

Every round the experts' raw predictions are clipped into the current trust
region, mixed with the fixed-share weights, and scored. The weights are then
reweighted by ``exp(-alpha_t * loss)`` and shrunk toward the prior by
``beta_{t+1}``. ``alpha_t`` is the exp-concavity modulus of the squared loss
over the clipped predictions seen so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .errors import ParameterError
from .forecaster import RoundOutput
from .hinting import RefPolicy, TrustRegion, clip, update_radius
from .stream import StreamLike, as_stream

ALPHA_FLOOR = 1e-12


class SubLearner(Protocol):
    """Two-phase learner driven by the meta-algorithm.

    The trust region is passed in full so that each learner can derive its
    own hint (the shared reference point, or a self-confident fixed point).
    """

    def begin_round(self, x: np.ndarray, region: TrustRegion) -> RoundOutput: ...

    def end_round(self, y: float) -> float: ...


def beta_schedule(t: int) -> float:
    """Mixing rate ``1 / ((e+t) ln^2(e+t) + 1)`` applied after round ``t``."""
    if t < 0:
        raise ParameterError("t must be nonnegative")
    z = math.e + t
    return 1.0 / (z * math.log(z) ** 2 + 1.0)


def _check_simplex(p: np.ndarray, name: str) -> None:
    if p.ndim != 1 or p.size == 0:
        raise ParameterError(f"{name} must be a nonempty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise ParameterError(f"{name} must lie in the probability simplex")


@dataclass(slots=True)
class ExpertsState:
    """Fixed-share weights together with the running loss scale.

    Attributes
    ----------
    n : int
        Number of experts.
    p : ndarray
        Current weights.
    p1 : ndarray
        Prior the weights are shrunk toward.
    max_loss_seen : float
        Largest clipped-prediction loss observed so far.
    round : int
        Completed rounds.
    alpha_floor : float
        Lower cap on the loss scale, which keeps ``alpha`` finite.
    """

    n: int
    p: np.ndarray = None
    p1: np.ndarray = None
    max_loss_seen: float = 0.0
    round: int = 0
    alpha_floor: float = ALPHA_FLOOR

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ParameterError("number of experts must be a positive integer")
        if self.p1 is None:
            self.p1 = np.full(self.n, 1.0 / self.n)
        self.p1 = np.asarray(self.p1, dtype=float)
        if self.p is None:
            self.p = self.p1.copy()
        self.p = np.asarray(self.p, dtype=float)
        _check_simplex(self.p1, "prior")
        _check_simplex(self.p, "weights")
        if self.p.shape != (self.n,) or self.p1.shape != (self.n,):
            raise ParameterError("weight vectors must have length n")
        if self.alpha_floor <= 0:
            raise ParameterError("alpha_floor must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 / (2.0 * max(self.max_loss_seen, self.alpha_floor))


def fixed_share_update(
    state: ExpertsState,
    losses,
    *,
    alpha: float | None = None,
    beta: float | None = None,
) -> ExpertsState:
    """Return the weights for the next round.

    ``alpha`` and ``beta`` override the schedule; they exist for tests. By
    default the loss scale absorbs this round's losses before ``alpha`` is
    read, and ``beta`` is ``beta_schedule`` of the round just completed.
    """
    losses = np.asarray(losses, dtype=float).reshape(-1)
    if losses.shape != (state.n,):
        raise ParameterError(f"expected {state.n} losses, got {losses.shape[0]}")
    if not np.all(np.isfinite(losses)) or np.any(losses < 0):
        raise ParameterError("losses must be finite and nonnegative")
    max_loss = max(state.max_loss_seen, float(losses.max()))
    completed = state.round + 1
    if alpha is None:
        alpha = 1.0 / (2.0 * max(max_loss, state.alpha_floor))
    if beta is None:
        beta = beta_schedule(completed)
    if not 0 <= beta <= 1:
        raise ParameterError("beta must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        logw = np.log(state.p) - alpha * losses
    logw -= logw.max()
    q = np.exp(logw)
    q /= q.sum()
    p = (1.0 - beta) * q + beta * state.p1
    p /= p.sum()
    return replace(state, p=p, max_loss_seen=max_loss, round=completed)


def aggregate(p, clipped_preds) -> float:
    """Convex combination of the clipped predictions."""
    return float(np.dot(np.asarray(p, dtype=float), np.asarray(clipped_preds, dtype=float)))


@dataclass(slots=True)
class MetaTrace:
    """Per-round record of one range-clipped meta run (0-indexed rows).

    ``alpha[t]`` and ``beta[t]`` are the values used by the update that
    follows round ``t``; ``radius[t]`` is the radius in force during round
    ``t``; ``weights[t]`` are the weights that produced ``y_bar[t]``.
    """

    y: np.ndarray
    y_ref: np.ndarray
    radius: np.ndarray
    raw: np.ndarray
    clipped: np.ndarray
    hints: np.ndarray
    weights: np.ndarray
    y_bar: np.ndarray
    meta_loss: np.ndarray
    expert_loss: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    final_state: ExpertsState = field(repr=False)

    @property
    def n_experts(self) -> int:
        return self.raw.shape[1]

    def alpha_after(self, b: int) -> float:
        """``alpha`` in force after round ``b``; the last value is reused past the end."""
        return float(self.alpha[min(b + 1, len(self.alpha) - 1)])

    def beta_after(self, b: int) -> float:
        """Mixing rate applied after round ``b`` (0-indexed)."""
        return float(self.beta[b])


def run_clipped_meta(
    experts: Sequence[SubLearner],
    ref_policy: RefPolicy,
    stream: StreamLike,
    *,
    prior=None,
    alpha_floor: float = ALPHA_FLOOR,
) -> MetaTrace:
    """Drive a bank of sub-learners through the stream and aggregate them."""
    stream = as_stream(stream)
    n, T = len(experts), len(stream)
    if n == 0:
        raise ParameterError("need at least one expert")
    state = ExpertsState(n, p1=prior, alpha_floor=alpha_floor)
    cols = {k: np.empty((T, n)) for k in ("raw", "clipped", "hints", "weights", "expert_loss")}
    rows = {k: np.empty(T) for k in ("y_ref", "radius", "y_bar", "meta_loss", "alpha", "beta")}
    radius, prev_y = 0.0, None
    for t in range(T):
        x, y = stream.X[t], float(stream.y[t])
        region = TrustRegion(ref_policy.reference(t, prev_y), radius)
        outs = [e.begin_round(x, region) for e in experts]
        raw = np.array([o.prediction for o in outs])
        clipped = clip(raw, region)
        y_bar = aggregate(state.p, clipped)
        losses = 0.5 * (y - clipped) ** 2
        for e in experts:
            e.end_round(y)
        cols["raw"][t] = raw
        cols["clipped"][t] = clipped
        cols["hints"][t] = [o.hint_used for o in outs]
        cols["weights"][t] = state.p
        cols["expert_loss"][t] = losses
        rows["y_ref"][t] = region.y_ref
        rows["radius"][t] = radius
        rows["y_bar"][t] = y_bar
        rows["meta_loss"][t] = 0.5 * (y - y_bar) ** 2
        state = fixed_share_update(state, losses)
        rows["alpha"][t] = state.alpha
        rows["beta"][t] = beta_schedule(state.round)
        radius = update_radius(region, y).radius
        prev_y = y
    return MetaTrace(y=stream.y.copy(), final_state=state, **cols, **rows)
