"""Discounted Vovk-Azoury-Warmuth forecaster.

The production path keeps the discounted second-moment matrix

    Sigma_t = x_t x_t^T + gamma * Sigma_{t-1},   Sigma_0 = lam * I,

and the discounted label-feature sum theta_{t+1} = y_t x_t + gamma * theta_t,
and predicts with

    w_t = Sigma_t^{-1} (hint_t * x_t + gamma * theta_t).

Rounds follow a two-phase protocol: :meth:`DiscountedVAW.begin_round` sees
the features and a hint, :meth:`DiscountedVAW.end_round` sees the label.

Two reference solvers, :func:`ftrl_solve` and :func:`md_step`, rebuild the
same weights from the raw history through different objectives. They exist
for equivalence testing and are not used on the hot path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .errors import NumericalError, ParameterError, ProtocolError
from .stream import StreamRecord

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-10


@dataclass(frozen=True, slots=True)
class RoundOutput:
    """What a learner commits to in one round."""

    weights: np.ndarray
    prediction: float
    hint_used: float


@dataclass(frozen=True, slots=True)
class MDSnapshot:
    """State needed by :func:`md_step`: the previous matrix and weights."""

    sigma: np.ndarray
    weights: np.ndarray
    gamma: float


def _check_params(dim: int, lam: float, gamma: float) -> None:
    if int(dim) != dim or dim < 1:
        raise ParameterError(f"dim must be a positive integer, got {dim!r}")
    if not np.isfinite(lam) or lam <= 0:
        raise ParameterError(f"lambda must be positive, got {lam!r}")
    if not np.isfinite(gamma) or not 0 < gamma <= 1:
        raise ParameterError(f"gamma must lie in (0, 1], got {gamma!r}")


@dataclass(slots=True)
class DiscountedVAW:
    """Discounted VAW forecaster with explicit sufficient statistics.

    Parameters
    ----------
    dim : int
        Feature dimension ``d``.
    lam : float
        Ridge parameter, strictly positive.
    gamma : float
        Discount factor in ``(0, 1]``; ``gamma = 1`` is the classical VAW
        forecaster.
    first_hint_zero : bool, default True
        Replace the hint of the very first round by 0. The FTRL and
        mirror-descent readings of the update, and the regret bound, assume
        this. Self-confident learners switch it off.

    Attributes
    ----------
    sigma : ndarray of shape (d, d)
        ``Sigma_t`` after the last completed round.
    theta : ndarray of shape (d,)
        ``theta_{t+1}``, the discounted sum of ``y_s x_s``.
    round : int
        Number of completed rounds.
    jitter_count : int
        How many times a factorization needed the diagonal jitter retry.
    """

    dim: int
    lam: float
    gamma: float
    first_hint_zero: bool = True
    sigma: np.ndarray = field(init=False)
    theta: np.ndarray = field(init=False)
    round: int = field(init=False, default=0)
    jitter_count: int = field(init=False, default=0)
    last_weights: np.ndarray = field(init=False)
    _pending: tuple | None = field(init=False, default=None, repr=False)
    _probe: tuple | None = field(init=False, default=None, repr=False)

    def __post_init__(self) -> None:
        _check_params(self.dim, self.lam, self.gamma)
        self.dim = int(self.dim)
        self.lam = float(self.lam)
        self.gamma = float(self.gamma)
        self.sigma = self.lam * np.eye(self.dim)
        self.theta = np.zeros(self.dim)
        self.last_weights = np.zeros(self.dim)

    @property
    def mid_round(self) -> bool:
        return self._pending is not None

    def _features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ParameterError(f"expected {self.dim} features, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("features must be finite")
        return x

    def _factor(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(Sigma_t, cholesky factor)`` for the next round, cached per x."""
        if self._probe is not None and np.array_equal(self._probe[0], x):
            return self._probe[1], self._probe[2]
        sigma = np.outer(x, x) + self.gamma * self.sigma
        chol, info = lapack.dpotrf(sigma, lower=1, clean=1)
        if info != 0:
            bump = JITTER_SCALE * np.trace(sigma) / self.dim
            sigma = sigma + bump * np.eye(self.dim)
            chol, info = lapack.dpotrf(sigma, lower=1, clean=1)
            if info != 0:
                raise NumericalError("Cholesky factorization failed after jitter retry")
            self.jitter_count += 1
            logger.warning("jitter %.3g added at round %d", bump, self.round + 1)
        self._probe = (x.copy(), sigma, chol)
        return sigma, chol

    def _solve(self, chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        sol, info = lapack.dpotrs(chol, rhs, lower=1)
        if info != 0:
            raise NumericalError("triangular solve failed")
        return sol

    def leverage_terms(self, x) -> tuple[float, float]:
        """Coefficients of the prediction as an affine function of the hint.

        With ``Sigma_t`` built from ``x``, the prediction for hint ``h`` is
        ``a * h + c`` where ``a = x^T Sigma_t^{-1} x`` and
        ``c = gamma * x^T Sigma_t^{-1} theta_t``. Does not advance the state.
        """
        if self.mid_round:
            raise ProtocolError("leverage_terms called mid-round")
        x = self._features(x)
        _, chol = self._factor(x)
        rhs = np.column_stack([x, self.gamma * self.theta])
        sol = self._solve(chol, rhs)
        return float(x @ sol[:, 0]), float(x @ sol[:, 1])

    def begin_round(self, x, hint: float = 0.0) -> RoundOutput:
        """Reveal the features, fold them into ``Sigma`` and predict."""
        if self.mid_round:
            raise ProtocolError("begin_round called twice without end_round")
        x = self._features(x)
        hint = float(hint)
        if not np.isfinite(hint):
            raise ParameterError("hint must be finite")
        if self.round == 0 and self.first_hint_zero:
            hint = 0.0
        sigma, chol = self._factor(x)
        w = self._solve(chol, hint * x + self.gamma * self.theta)
        prediction = float(x @ w)
        self.sigma = sigma
        self._probe = None
        self._pending = (x, prediction)
        self.last_weights = w
        return RoundOutput(weights=w, prediction=prediction, hint_used=hint)

    def end_round(self, y: float) -> float:
        """Reveal the label; returns the squared loss of this round."""
        if not self.mid_round:
            raise ProtocolError("end_round called without begin_round")
        y = float(y)
        if not np.isfinite(y):
            raise ParameterError("label must be finite")
        x, prediction = self._pending
        self.theta = y * x + self.gamma * self.theta
        self.round += 1
        self._pending = None
        return 0.5 * (y - prediction) ** 2

    def snapshot(self) -> MDSnapshot:
        """Copy of ``(Sigma_{t-1}, w_{t-1})`` between rounds."""
        if self.mid_round:
            raise ProtocolError("snapshot taken mid-round")
        return MDSnapshot(self.sigma.copy(), self.last_weights.copy(), self.gamma)


def init(dim: int, lam: float, gamma: float) -> DiscountedVAW:
    """Fresh forecaster with ``Sigma_0 = lam * I`` and ``theta_1 = 0``."""
    return DiscountedVAW(dim, lam, gamma)


def begin_round(state: DiscountedVAW, x, hint: float = 0.0) -> RoundOutput:
    return state.begin_round(x, hint)


def end_round(state: DiscountedVAW, y: float) -> float:
    return state.end_round(y)


def ftrl_solve(
    history: Sequence[StreamRecord],
    gamma: float,
    lam: float,
    x_now,
    hint: float,
) -> np.ndarray:
    """Minimize ``h_t(w) + gamma * sum_{s=0}^{t-1} gamma^{t-1-s} l_s(w)`` from scratch.

    ``h_t(w) = (hint - <x_now, w>)^2 / 2`` is the optimistic term and
    ``l_0(w) = lam/2 |w|^2``. Each quadratic contributes its Hessian and
    linear coefficient to the normal equations, which are solved by LU.
    """
    x_now = np.asarray(x_now, dtype=float).reshape(-1)
    d = x_now.shape[0]
    _check_params(d, lam, gamma)
    t = len(history) + 1
    hess = np.outer(x_now, x_now)
    lin = hint * x_now
    hess = hess + gamma * gamma ** (t - 1) * lam * np.eye(d)
    for s, rec in enumerate(history, start=1):
        weight = gamma * gamma ** (t - 1 - s)
        xs = np.asarray(rec.x, dtype=float)
        hess = hess + weight * np.outer(xs, xs)
        lin = lin + weight * rec.y * xs
    try:
        return np.linalg.solve(hess, lin)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc)) from exc


def md_step(
    prev: MDSnapshot,
    prev_record: StreamRecord | None,
    prev_hint: float,
    x_now,
    hint: float,
) -> np.ndarray:
    """One mirror-descent step on ``gamma*l_{t-1} - gamma*h_{t-1} + h_t`` plus a Bregman term.

    The Bregman divergence of ``psi(w) = |w|^2_Sigma / 2`` is
    ``|w - w_prev|^2_Sigma / 2``; it is expanded into the normal equations
    together with the three quadratic losses. ``prev_record=None`` means
    there is no previous loss (first round).
    """
    x_now = np.asarray(x_now, dtype=float).reshape(-1)
    g = prev.gamma
    hess = np.outer(x_now, x_now) + g * prev.sigma
    lin = hint * x_now + g * (prev.sigma @ prev.weights)
    if prev_record is not None:
        xp = np.asarray(prev_record.x, dtype=float)
        outer_p = np.outer(xp, xp)
        # gamma * l_{t-1} and -gamma * h_{t-1}: equal curvature, opposite sign
        hess = hess + g * outer_p - g * outer_p
        lin = lin + g * prev_record.y * xp - g * prev_hint * xp
    try:
        return np.linalg.solve(hess, lin)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc)) from exc

