"""Trust regions, reference points and self-confident hints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .forecaster import DiscountedVAW

REF_KINDS = ("zero", "previous_label", "external")


@dataclass(frozen=True, slots=True)
class TrustRegion:
    """Interval ``[y_ref - radius, y_ref + radius]`` used for clipping."""

    y_ref: float
    radius: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.y_ref):
            raise ParameterError("reference point must be finite")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ParameterError(f"radius must be finite and nonnegative, got {self.radius!r}")

    @property
    def lower(self) -> float:
        return self.y_ref - self.radius

    @property
    def upper(self) -> float:
        return self.y_ref + self.radius

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def clip(value, region: TrustRegion):
    """Project ``value`` (scalar or array) onto the region."""
    out = np.minimum(np.maximum(value, region.lower), region.upper)
    return float(out) if np.ndim(out) == 0 else out


def update_radius(region: TrustRegion, y: float) -> TrustRegion:
    """Grow the radius to cover the label just observed."""
    return TrustRegion(region.y_ref, max(region.radius, abs(float(y) - region.y_ref)))


@dataclass(frozen=True, slots=True)
class RefPolicy:
    """How the reference point of each round is chosen.

    ``previous_label`` uses the last observed label (0 on the first round),
    ``zero`` always uses 0, and ``external`` reads ``values[t]``.
    """

    kind: str = "previous_label"
    values: Sequence[float] | None = None

    def __post_init__(self) -> None:
        if self.kind not in REF_KINDS:
            raise ParameterError(f"unknown reference policy {self.kind!r}")
        if self.kind == "external":
            if self.values is None:
                raise ParameterError("external policy needs a value sequence")
            vals = np.asarray(self.values, dtype=float).reshape(-1)
            if not np.all(np.isfinite(vals)):
                raise ParameterError("external reference values must be finite")
            object.__setattr__(self, "values", vals)

    def reference(self, t: int, prev_y: float | None) -> float:
        """Reference point for 0-indexed round ``t``."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "previous_label":
            return 0.0 if prev_y is None else float(prev_y)
        if t >= len(self.values):
            raise ParameterError(f"external reference sequence too short for round {t}")
        return float(self.values[t])


def fixed_point_hint(a: float, c: float, region: TrustRegion) -> float:
    """Solve ``h = clip(a*h + c)`` for a slope ``0 <= a < 1``.

    The unclipped fixed point is ``c / (1 - a)``. If it falls outside the
    region, the nearer endpoint is itself a fixed point because the affine
    map then pushes past that endpoint.
    """
    if not 0 <= a < 1:
        raise ParameterError(f"slope must lie in [0, 1), got {a!r}")
    return clip(c / (1.0 - a), region)


def self_confident_hint(
    state: DiscountedVAW, x, region: TrustRegion, *, lagged: bool = False
) -> float:
    """Hint equal to the clipped prediction it induces.

    With ``lagged=True`` the hint is instead the clipped prediction of the
    previous round's weights on ``x``. That variant is experimental and
    carries no guarantee.
    """
    if lagged:
        return clip(float(np.asarray(x, dtype=float) @ state.last_weights), region)
    a, c = state.leverage_terms(x)
    # round-off can push a hair above 1 - eps for huge ||x||
    a = min(max(a, 0.0), np.nextafter(1.0, 0.0))
    return fixed_point_hint(a, c, region)
