"""Discount grids, expert banks and the strongly-adaptive ensemble."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .forecaster import DiscountedVAW, RoundOutput
from .hinting import RefPolicy, TrustRegion, clip, self_confident_hint, update_radius
from .meta import (
    ALPHA_FLOOR,
    ExpertsState,
    MetaTrace,
    aggregate,
    beta_schedule,
    fixed_share_update,
    run_clipped_meta,
)
from .stream import StreamLike, as_stream

HINT_MODES = ("external", "self_confident")
DEFAULT_MAX_EXPERTS = 100_000


@dataclass(frozen=True, slots=True)
class DiscountGrid:
    """Geometric grid of discounts ``gamma = eta / (1 + eta)`` plus ``gamma = 0``."""

    d: int
    T: int
    b: float
    eta_min: float
    eta_max: float
    etas: tuple[float, ...]
    gammas: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.gammas)


def build_grid(d: int, T: int, b: float) -> DiscountGrid:
    """Grid ``eta_i = min(2d * b**i, dT)`` stopping at the cap.

    When ``2d >= dT`` the cap is the only point. ``gammas[0]`` is always 0.
    """
    if int(d) != d or d < 1:
        raise ParameterError("d must be a positive integer")
    if int(T) != T or T < 1:
        raise ParameterError("T must be a positive integer")
    if not np.isfinite(b) or b <= 1:
        raise ParameterError(f"grid base must exceed 1, got {b!r}")
    eta_min, eta_max = 2.0 * d, float(d * T)
    etas = []
    i = 0
    while eta_min * b**i < eta_max * (1 - 1e-12):
        etas.append(eta_min * b**i)
        i += 1
    etas.append(eta_max)
    gammas = (0.0,) + tuple(e / (1.0 + e) for e in etas)
    return DiscountGrid(int(d), int(T), float(b), eta_min, eta_max, tuple(etas), gammas)


class ForecasterExpert:
    """A discounted VAW learner speaking the sub-learner protocol.

    In ``external`` mode the hint is the region's reference point; in
    ``self_confident`` mode it is the clipped fixed point of the learner's
    own prediction.
    """

    def __init__(self, dim: int, lam: float, gamma: float, hint_mode: str = "external"):
        if hint_mode not in HINT_MODES:
            raise ParameterError(f"unknown hint mode {hint_mode!r}")
        self.hint_mode = hint_mode
        self.gamma = gamma
        self.learner = DiscountedVAW(dim, lam, gamma, first_hint_zero=hint_mode == "external")

    def begin_round(self, x, region: TrustRegion) -> RoundOutput:
        if self.hint_mode == "external":
            hint = region.y_ref
        else:
            hint = self_confident_hint(self.learner, x, region)
        return self.learner.begin_round(x, hint)

    def end_round(self, y: float) -> float:
        return self.learner.end_round(y)


class GreedyAlias:
    """The ``gamma = 0`` member: predicts the reference point every round."""

    gamma = 0.0

    def __init__(self):
        self._pending: float | None = None

    def begin_round(self, x, region: TrustRegion) -> RoundOutput:
        x = np.asarray(x, dtype=float)
        hint = region.y_ref
        sq = float(x @ x)
        w = hint * x / sq if sq > 0 else np.zeros_like(x)
        self._pending = hint
        return RoundOutput(weights=w, prediction=hint, hint_used=hint)

    def end_round(self, y: float) -> float:
        pred, self._pending = self._pending, None
        return 0.5 * (float(y) - pred) ** 2


def make_bank(grid: DiscountGrid, lam: float, hint_mode: str = "external") -> list:
    """One learner per grid discount; the zero discount becomes the greedy alias."""
    if hint_mode not in HINT_MODES:
        raise ParameterError(f"unknown hint mode {hint_mode!r}")
    return [
        GreedyAlias() if g == 0 else ForecasterExpert(grid.d, lam, g, hint_mode)
        for g in grid.gammas
    ]


def run_flat_grid(
    d: int,
    T: int,
    lam: float,
    b: float,
    hint_mode: str,
    ref_policy: RefPolicy,
    stream: StreamLike,
) -> MetaTrace:
    """Range-clipped fixed-share over the full discount grid."""
    grid = build_grid(d, T, b)
    return run_clipped_meta(make_bank(grid, lam, hint_mode), ref_policy, stream)


@dataclass(frozen=True, slots=True)
class CoverInterval:
    """Dyadic interval ``[k 2^level, (k+1) 2^level - 1]``, possibly cut at the horizon."""

    level: int
    k: int
    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, t: int) -> bool:
        return self.start <= t <= self.end


def _top_level(T: int) -> int:
    return T.bit_length() - 1


def geometric_cover(T: int) -> list[CoverInterval]:
    """All dyadic intervals for horizon ``T``, ordered by level then start."""
    if int(T) != T or T < 1:
        raise ParameterError("T must be a positive integer")
    out = []
    for level in range(_top_level(T) + 1):
        size = 1 << level
        for k in range((T + size - 1) // size):
            out.append(CoverInterval(level, k, k * size, min((k + 1) * size, T) - 1))
    return out


def partition_interval(s: int, tau: int, T: int) -> list[CoverInterval]:
    """Split ``[s, tau]`` greedily into the largest aligned dyadic blocks."""
    if not 0 <= s <= tau < T:
        raise ParameterError(f"need 0 <= s <= tau < T, got s={s}, tau={tau}, T={T}")
    top = _top_level(T)
    pieces = []
    cur = s
    while cur <= tau:
        level = top
        while level > 0 and (cur % (1 << level) or cur + (1 << level) - 1 > tau):
            level -= 1
        size = 1 << level
        pieces.append(CoverInterval(level, cur >> level, cur, cur + size - 1))
        cur += size
    return pieces


@dataclass(slots=True)
class StronglyAdaptiveTrace:
    """Record of a strongly-adaptive run.

    Expert ``j`` pairs ``gammas[j % G]`` with ``intervals[j // G]``. Per-expert
    arrays in ``inside`` cover only the rounds of that expert's interval;
    outside it the expert predicts the reference point.
    """

    grid: DiscountGrid
    intervals: list[CoverInterval]
    y: np.ndarray
    y_ref: np.ndarray
    radius: np.ndarray
    y_bar: np.ndarray
    meta_loss: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    inside: dict = field(repr=False)
    final_state: ExpertsState = field(repr=False)
    raw_full: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_experts(self) -> int:
        return len(self.intervals) * len(self.grid.gammas)

    def expert_index(self, interval_idx: int, gamma_idx: int) -> int:
        return interval_idx * len(self.grid.gammas) + gamma_idx

    def alpha_after(self, b: int) -> float:
        return float(self.alpha[min(b + 1, len(self.alpha) - 1)])

    def beta_after(self, b: int) -> float:
        return float(self.beta[b])


def run_strongly_adaptive(
    d: int,
    T: int,
    lam: float,
    b: float,
    hint_mode: str,
    ref_policy: RefPolicy,
    stream: StreamLike,
    *,
    max_experts: int = DEFAULT_MAX_EXPERTS,
    record_full: bool = False,
) -> StronglyAdaptiveTrace:
    """Fixed-share over every (discount, cover interval) pair.

    Forecasters are created when their interval opens and discarded when it
    closes. The stream may be shorter than ``T``; the grid and cover are
    still built for horizon ``T`` so that truncation never alters the past.
    ``record_full`` keeps every expert's raw prediction for every round,
    which costs ``T * N`` floats.
    """
    stream = as_stream(stream)
    if len(stream) > T:
        raise ParameterError("stream is longer than the horizon T")
    if stream.dim != d and len(stream):
        raise ParameterError("stream dimension does not match d")
    grid = build_grid(d, T, b)
    intervals = geometric_cover(T)
    G = len(grid.gammas)
    n = G * len(intervals)
    if n > max_experts:
        raise ParameterError(f"{n} experts exceed the cap of {max_experts}")
    # interval index of (level, k)
    offsets, acc = [], 0
    for level in range(_top_level(T) + 1):
        offsets.append(acc)
        acc += (T + (1 << level) - 1) >> level

    state = ExpertsState(n, alpha_floor=ALPHA_FLOOR)
    live: dict[int, object] = {}
    inside: dict[int, dict[str, list]] = {}
    n_rounds = len(stream)
    rows = {k: np.empty(n_rounds) for k in ("y_ref", "radius", "y_bar", "meta_loss", "alpha", "beta")}
    raw_full = np.empty((n_rounds, n)) if record_full else None
    radius, prev_y = 0.0, None
    for t in range(n_rounds):
        x, y = stream.X[t], float(stream.y[t])
        region = TrustRegion(ref_policy.reference(t, prev_y), radius)
        raw = np.full(n, region.y_ref)
        active = []
        for level in range(len(offsets)):
            iv = offsets[level] + (t >> level)
            for g_idx, g in enumerate(grid.gammas):
                j = iv * G + g_idx
                if j not in live:
                    live[j] = GreedyAlias() if g == 0 else ForecasterExpert(d, lam, g, hint_mode)
                    inside[j] = {"raw": [], "hint": [], "clipped": []}
                out = live[j].begin_round(x, region)
                raw[j] = out.prediction
                inside[j]["raw"].append(out.prediction)
                inside[j]["hint"].append(out.hint_used)
                active.append(j)
        if raw_full is not None:
            raw_full[t] = raw
        clipped = clip(raw, region)
        y_bar = aggregate(state.p, clipped)
        for j in active:
            live[j].end_round(y)
            inside[j]["clipped"].append(float(clipped[j]))
            if intervals[j // G].end == t:
                del live[j]
        state = fixed_share_update(state, 0.5 * (y - clipped) ** 2)
        rows["y_ref"][t] = region.y_ref
        rows["radius"][t] = radius
        rows["y_bar"][t] = y_bar
        rows["meta_loss"][t] = 0.5 * (y - y_bar) ** 2
        rows["alpha"][t] = state.alpha
        rows["beta"][t] = beta_schedule(state.round)
        radius = update_radius(region, y).radius
        prev_y = y
    inside = {j: {k: np.asarray(v) for k, v in rec.items()} for j, rec in inside.items()}
    return StronglyAdaptiveTrace(
        grid=grid,
        intervals=intervals,
        y=stream.y.copy(),
        inside=inside,
        final_state=state,
        raw_full=raw_full,
        **rows,
    )

