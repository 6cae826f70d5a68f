"""Offline evaluation of regret, variability and bound right-hand sides.

Everything here is a pure function of a finished stream, a comparator
sequence and (where needed) the hints a learner used. Losses are the
squared losses ``l_s(w) = (y_s - <x_s, w>)^2 / 2`` for ``s >= 1`` together
with the regularizer ``l_0(w) = lam/2 |w|^2`` as round zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .forecaster import DiscountedVAW
from .stream import Stream, StreamLike, as_stream

TERM_NAMES = ("ridge_term", "logdet_term", "variability_term", "stability_term")
COARSE_SCAN = 256


@dataclass(frozen=True, slots=True)
class ComparatorSequence:
    """Benchmark weights ``u_1..u_T`` stored as a ``(T, d)`` array."""

    u: np.ndarray

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float)
        if u.ndim != 2:
            raise ParameterError("comparator must be a (T, d) array")
        if not np.all(np.isfinite(u)):
            raise ParameterError("comparator entries must be finite")
        object.__setattr__(self, "u", u)

    def __len__(self) -> int:
        return self.u.shape[0]

    @classmethod
    def constant(cls, w, T: int) -> "ComparatorSequence":
        return cls(np.tile(np.asarray(w, dtype=float).reshape(1, -1), (T, 1)))

    def window(self, start: int, end: int) -> "ComparatorSequence":
        return ComparatorSequence(self.u[start : end + 1])


def _as_comparator(u, stream: Stream) -> np.ndarray:
    arr = u.u if isinstance(u, ComparatorSequence) else np.asarray(u, dtype=float)
    if arr.ndim == 1:
        arr = np.tile(arr, (len(stream), 1))
    if arr.shape != stream.X.shape:
        raise ParameterError(f"comparator shape {arr.shape} does not match stream {stream.X.shape}")
    return arr


@dataclass(frozen=True, slots=True)
class BoundReport:
    """Measured left side, evaluated right side and its breakdown."""

    lhs: float
    rhs: float
    terms: dict = field(default_factory=dict)
    check: str = ""

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "passed": self.passed,
            "terms": dict(self.terms),
        }


def losses(stream: Stream, w) -> np.ndarray:
    """Per-round losses ``l_1..l_T`` of a fixed vector or a per-round array."""
    w = np.asarray(w, dtype=float)
    pred = stream.X @ w if w.ndim == 1 else np.einsum("td,td->t", stream.X, w)
    return 0.5 * (stream.y - pred) ** 2


def _loss_table(stream: Stream, U: np.ndarray, lam: float) -> np.ndarray:
    """``L[s, c] = l_s(U[c])`` for ``s = 0..T`` and every comparator row ``c``."""
    preds = stream.X @ U.T
    table = np.empty((len(stream) + 1, U.shape[0]))
    table[0] = 0.5 * lam * np.einsum("cd,cd->c", U, U)
    table[1:] = 0.5 * (stream.y[:, None] - preds) ** 2
    return table


def _transition_differences(stream: Stream, U: np.ndarray, lam: float) -> np.ndarray:
    """``D[s, t-1] = l_s(u_{t+1}) - l_s(u_t)`` for transitions ``t = 1..T-1``."""
    table = _loss_table(stream, U, lam)
    return table[:, 1:] - table[:, :-1]


class VariabilityProfile:
    """``gamma -> P_T^gamma`` for a fixed stream and comparator.

    The positive loss differences are computed once; each evaluation is a
    weighted average per transition.
    """

    def __init__(self, stream: StreamLike, u, lam: float):
        stream = as_stream(stream)
        U = _as_comparator(u, stream)
        T = len(stream)
        self.T = T
        if T < 2:
            self._pos = np.zeros((1, 0))
            self._lag = np.zeros((1, 0), dtype=int)
            self._mask = np.zeros((1, 0), dtype=bool)
            return
        diff = _transition_differences(stream, U, lam)
        s = np.arange(T + 1)[:, None]
        t = np.arange(1, T)[None, :]
        self._mask = s <= t
        self._lag = np.where(self._mask, t - s, 0)
        self._pos = np.where(self._mask, np.maximum(diff, 0.0), 0.0)
        # transitions whose comparator does not move contribute nothing
        self._moving = np.any(self._pos > 0, axis=0)

    def __call__(self, gamma: float) -> float:
        if not 0 <= gamma <= 1:
            raise ParameterError("gamma must lie in [0, 1]")
        if self.T < 2 or not np.any(self._moving):
            return 0.0
        lag = self._lag[:, self._moving]
        mask = self._mask[:, self._moving]
        w = np.where(mask, np.power(float(gamma), lag), 0.0)
        num = np.sum(w * self._pos[:, self._moving], axis=0)
        return float(np.sum(num / np.sum(w, axis=0)))


def variability(stream: StreamLike, u, gamma: float, lam: float) -> float:
    """Discounted variability ``P_T^gamma`` of the comparator sequence."""
    return VariabilityProfile(stream, u, lam)(gamma)


def naive_variability(stream: StreamLike, u, lam: float) -> float:
    """``sum_t max_s [l_s(u_{t+1}) - l_s(u_t)]_+`` with ``s`` over ``0..T``."""
    stream = as_stream(stream)
    U = _as_comparator(u, stream)
    if len(stream) < 2:
        return 0.0
    diff = _transition_differences(stream, U, lam)
    return float(np.sum(np.max(np.maximum(diff, 0.0), axis=0)))


def discounted_objective(stream: StreamLike, w, t: int, gamma: float, lam: float) -> float:
    """``gamma^t lam/2 |w|^2 + sum_{s<=t} gamma^(t-s) l_s(w)``."""
    stream = as_stream(stream)
    if not 0 <= t <= len(stream):
        raise ParameterError("t exceeds the stream length")
    w = np.asarray(w, dtype=float)
    ls = losses(stream.window(0, t - 1), w) if t else np.zeros(0)
    weights = float(gamma) ** np.arange(t - 1, -1, -1)
    return float(gamma**t * 0.5 * lam * (w @ w) + weights @ ls)


def dynamic_regret(predictions, stream: StreamLike, u) -> float:
    """Learner loss minus comparator loss, summed over the stream."""
    stream = as_stream(stream)
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    if predictions.shape[0] != len(stream):
        raise ParameterError("predictions and stream differ in length")
    U = _as_comparator(u, stream)
    learner = 0.5 * (stream.y - predictions) ** 2
    return float(np.sum(learner) - np.sum(losses(stream, U)))


def _solve_fixed_point(root_v: float, profile: VariabilityProfile, tol: float) -> float:
    """Root of ``g(gamma) = gamma (sqrt V + sqrt P^gamma) - sqrt V`` on [0, 1]."""
    if root_v == 0:
        return 0.0

    def g(gamma: float) -> float:
        return gamma * (root_v + math.sqrt(max(profile(gamma), 0.0))) - root_v

    if profile(1.0) == 0:
        return 1.0
    grid = np.linspace(0.0, 1.0, COARSE_SCAN + 1)
    lo = hi = None
    prev = g(0.0)
    for a, b in zip(grid[:-1], grid[1:]):
        gb = g(b)
        if gb == 0:
            return float(b)
        if prev < 0 < gb:
            lo, hi = float(a), float(b)
            break
        prev = gb
    if lo is None:  # pragma: no cover - g(0) < 0 <= g(1) always
        raise ArithmeticError("no sign change located")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0:
            return mid
        if gm < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * 1e-3:
            break
    # the residual gamma - RHS(gamma) equals g(gamma) / (sqrt V + sqrt P)
    return lo if abs(g(lo)) < abs(g(hi)) else hi


def solve_gamma_star(stream: StreamLike, u, lam: float, hints, *, tol: float = 1e-9) -> float:
    """Discount balancing the hint error against the variability."""
    stream = as_stream(stream)
    hints = np.asarray(hints, dtype=float).reshape(-1)
    if hints.shape[0] != len(stream):
        raise ParameterError("hints and stream differ in length")
    v = 0.5 * stream.dim * float(np.sum((stream.y - hints) ** 2))
    return _solve_fixed_point(math.sqrt(v), VariabilityProfile(stream, u, lam), tol)


def solve_gamma_smallloss(stream: StreamLike, u, lam: float, *, tol: float = 1e-9) -> float:
    """As :func:`solve_gamma_star` with the comparator's loss in place of the hint error."""
    stream = as_stream(stream)
    U = _as_comparator(u, stream)
    v = stream.dim * float(np.sum(losses(stream, U)))
    return _solve_fixed_point(math.sqrt(v), VariabilityProfile(stream, U, lam), tol)


def fixed_point_residual_star(stream: StreamLike, u, lam: float, hints, gamma: float) -> float:
    """``|gamma - sqrt V / (sqrt V + sqrt P^gamma)|`` for the hint-error ``V``."""
    stream = as_stream(stream)
    v = 0.5 * stream.dim * float(np.sum((stream.y - np.asarray(hints, dtype=float)) ** 2))
    return _residual(math.sqrt(v), variability(stream, u, gamma, lam), gamma)


def fixed_point_residual_smallloss(stream: StreamLike, u, lam: float, gamma: float) -> float:
    stream = as_stream(stream)
    U = _as_comparator(u, stream)
    v = stream.dim * float(np.sum(losses(stream, U)))
    return _residual(math.sqrt(v), variability(stream, U, gamma, lam), gamma)


def _residual(root_v: float, p: float, gamma: float) -> float:
    if root_v == 0:
        return abs(gamma)
    return abs(gamma - root_v / (root_v + math.sqrt(max(p, 0.0))))


def replay(stream: StreamLike, gamma: float, lam: float, hints) -> np.ndarray:
    """Predictions of a fresh forecaster fed the given hints."""
    stream = as_stream(stream)
    learner = DiscountedVAW(stream.dim, lam, gamma)
    out = np.empty(len(stream))
    for t in range(len(stream)):
        out[t] = learner.begin_round(stream.X[t], hints[t]).prediction
        learner.end_round(stream.y[t])
    return out


def bound_general_dvaw(
    stream: StreamLike,
    u,
    gamma: float,
    lam: float,
    hints,
    predictions=None,
) -> BoundReport:
    """Dynamic-regret guarantee of the discounted forecaster, term by term.

    Parameters
    ----------
    stream, u
        Data and comparator sequence.
    gamma : float
        Discount in ``(0, 1]``.
    lam : float
        Ridge parameter.
    hints : array_like
        Hints the learner used; the first must be 0 for the guarantee.
    predictions : array_like, optional
        Measured predictions. When omitted the forecaster is replayed.

    Returns
    -------
    BoundReport
        ``lhs`` is the measured dynamic regret, ``rhs`` the sum of the four
        named terms.
    """
    stream = as_stream(stream)
    if not 0 < gamma <= 1:
        raise ParameterError("gamma must lie in (0, 1]")
    U = _as_comparator(u, stream)
    hints = np.asarray(hints, dtype=float).reshape(-1)
    T, d = stream.X.shape
    if hints.shape[0] != T:
        raise ParameterError("hints and stream differ in length")
    if predictions is None:
        predictions = replay(stream, gamma, lam, hints)
    lhs = dynamic_regret(predictions, stream, U)

    resid2 = (stream.y - hints) ** 2
    disc = gamma ** np.arange(T - 1, -1, -1)
    sq_norms = np.einsum("td,td->t", stream.X, stream.X)
    ridge = gamma * 0.5 * lam * float(U[0] @ U[0]) if T else 0.0
    logdet = 0.5 * d * float(resid2.max(initial=0.0)) * math.log1p(float(disc @ sq_norms) / (lam * d))
    var_term = gamma * _objective_increments(stream, U, gamma, lam)
    stab = 0.5 * d * -math.log(gamma) * float(resid2.sum()) if gamma < 1 else 0.0
    terms = dict(zip(TERM_NAMES, (ridge, logdet, var_term, stab)))
    return BoundReport(lhs=lhs, rhs=float(sum(terms.values())), terms=terms, check="general_dvaw")


def _objective_increments(stream: Stream, U: np.ndarray, gamma: float, lam: float) -> float:
    """``sum_{t=1}^{T-1} F_t(u_{t+1}) - F_t(u_t)``."""
    T = len(stream)
    if T < 2:
        return 0.0
    diff = _transition_differences(stream, U, lam)  # rows s = 0..T, cols t = 1..T-1
    moving = np.any(diff != 0, axis=0)
    if not np.any(moving):
        return 0.0
    s = np.arange(T + 1)[:, None]
    t = np.arange(1, T)[None, :][:, moving]
    # l_0 enters F_t with weight gamma^t, l_s with gamma^(t-s); both are gamma^(t-s)
    w = np.where(s <= t, np.power(float(gamma), np.where(s <= t, t - s, 0)), 0.0)
    return float(np.sum(w * diff[:, moving]))


def bound_static_vaw(stream: StreamLike, u, lam: float) -> float:
    """Classical VAW guarantee against a fixed comparator with zero hints."""
    stream = as_stream(stream)
    u = np.asarray(u, dtype=float)
    d = stream.dim
    sq = float(np.sum(stream.X**2))
    return 0.5 * lam * float(u @ u) + 0.5 * d * float(np.max(stream.y**2)) * math.log1p(sq / (lam * d))


def bound_fixed_share(alpha_final: float, beta_final: float, p1j: float) -> float:
    """Interval regret of fixed-share against one expert."""
    if alpha_final <= 0 or beta_final <= 0 or p1j <= 0:
        raise ParameterError("inputs must be positive")
    return (2.0 * math.log(1.0 / (beta_final * p1j)) + 1.0) / alpha_final


def adversarial_stream(d: int, T: int, Y: float, P: float, seed: int):
    """Hard instance with basis-vector features and random-sign labels.

    Returns
    -------
    stream : Stream
    comparator : ComparatorSequence
        Block-constant sequence that interpolates every label.
    sigma : float
        Label scale factor, labels are ``+-Y*sigma``.
    """
    if int(d) != d or d < 1 or int(T) != T or T < 1:
        raise ParameterError("d and T must be positive integers")
    if not (Y > 0 and P > 0):
        raise ParameterError("Y and P must be positive")
    if d * P > 2 * T * Y**2:
        raise ParameterError("need d*P <= 2*T*Y^2")
    sigma = math.sqrt(d * P / (2 * T * Y**2))
    rng = np.random.Generator(np.random.Philox(seed))
    y = Y * sigma * rng.choice(np.array([-1.0, 1.0]), size=T)
    coord = np.arange(T) % d
    X = np.zeros((T, d))
    X[np.arange(T), coord] = 1.0
    blocks = np.zeros(((T + d - 1) // d, d))
    blocks[np.arange(T) // d, coord] = y
    U = blocks[np.arange(T) // d]
    return Stream(X, y), ComparatorSequence(U), sigma


def logdet_lemma_sides(stream: StreamLike, gamma: float, lam: float, deltas) -> tuple[float, float]:
    """Both sides of the discounted log-determinant inequality.

    Left: ``sum_t delta_t^2 x_t^T M_t^{-1} x_t`` with
    ``M_t = x_t x_t^T + gamma M_{t-1}``, ``M_0 = lam I``.
    """
    stream = as_stream(stream)
    deltas = np.asarray(deltas, dtype=float)
    T, d = stream.X.shape
    M = lam * np.eye(d)
    lhs = 0.0
    for t in range(T):
        x = stream.X[t]
        M = np.outer(x, x) + gamma * M
        lhs += deltas[t] ** 2 * float(x @ np.linalg.solve(M, x))
    disc = gamma ** np.arange(T - 1, -1, -1)
    sq = np.einsum("td,td->t", stream.X, stream.X)
    rhs = d * -math.log(gamma) * float(np.sum(deltas**2)) + float(np.max(deltas**2)) * d * math.log1p(
        float(disc @ sq) / (lam * d)
    )
    return lhs, rhs


def discounted_terms_sides(
    stream: StreamLike, u, gamma: float, beta: float, lam: float, v: float
) -> tuple[float, float]:
    """Both sides of the inequality trading objective increments for variability."""
    stream = as_stream(stream)
    U = _as_comparator(u, stream)
    lhs = gamma * _objective_increments(stream, U, gamma, lam) + math.log(1.0 / gamma) * v
    rhs = beta / (1.0 - beta) * variability(stream, U, beta, lam) + (1.0 - gamma) / gamma * v
    return lhs, rhs


def best_fixed_comparator(stream: StreamLike) -> np.ndarray:
    """Least-squares vector minimizing the summed loss on the stream."""
    stream = as_stream(stream)
    sol, *_ = np.linalg.lstsq(stream.X, stream.y, rcond=None)
    return sol
