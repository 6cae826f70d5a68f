"""Containers for labelled feature streams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True, slots=True)
class StreamRecord:
    """One round of data: a feature vector and its real label."""

    x: np.ndarray
    y: float

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ParameterError("features must be finite")
        if not np.isfinite(self.y):
            raise ParameterError("label must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True, slots=True)
class Stream:
    """A whole stream stored column-wise.

    Attributes
    ----------
    X : ndarray of shape (T, d)
        Feature rows, one per round.
    y : ndarray of shape (T,)
        Labels.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ParameterError("X must be two-dimensional")
        if X.shape[0] != y.shape[0]:
            raise ParameterError("X and y disagree on the number of rounds")
        if X.shape[1] < 1:
            raise ParameterError("feature dimension must be at least 1")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ParameterError("stream entries must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __iter__(self) -> Iterator[StreamRecord]:
        for t in range(len(self)):
            yield StreamRecord(self.X[t], self.y[t])

    def window(self, start: int, end: int) -> "Stream":
        """Rounds ``start..end`` inclusive (0-indexed)."""
        return Stream(self.X[start : end + 1], self.y[start : end + 1])

    @classmethod
    def from_records(cls, records: Iterable[StreamRecord], dim: int | None = None) -> "Stream":
        records = list(records)
        if not records:
            if dim is None:
                raise ParameterError("dimension needed for an empty stream")
            return cls(np.zeros((0, dim)), np.zeros(0))
        return cls(np.stack([r.x for r in records]), np.array([r.y for r in records]))


StreamLike = Union[Stream, Sequence[StreamRecord]]


def as_stream(data: StreamLike) -> Stream:
    """Accept a :class:`Stream` or any sequence of records."""
    if isinstance(data, Stream):
        return data
    return Stream.from_records(data)
