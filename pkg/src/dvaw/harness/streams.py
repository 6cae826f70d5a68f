"""Synthetic stream generators keyed by a 64-bit seed.

All randomness comes from ``numpy.random.Generator(Philox(seed))``, a
counter-based generator whose output does not depend on the platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..oracle import ComparatorSequence, adversarial_stream
from ..stream import Stream

KINDS = ("iid_linear", "piecewise", "drift", "sign_flip", "adversarial")


def make_rng(seed: int) -> np.random.Generator:
    if int(seed) != seed or not 0 <= seed < 2**64:
        raise ParameterError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, slots=True)
class GeneratedStream:
    stream: Stream
    comparator: ComparatorSequence
    segments: tuple[int, ...] = ()


def _features(rng: np.random.Generator, T: int, d: int) -> np.ndarray:
    g = rng.normal(scale=1.0 / np.sqrt(d), size=(T, d))
    return g / np.maximum(1.0, np.linalg.norm(g, axis=1))[:, None]


def _vector(value, d: int, rng: np.random.Generator, name: str) -> np.ndarray:
    if value is None:
        return rng.normal(size=d)
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.shape != (d,):
        raise ParameterError(f"{name} must have {d} entries")
    return v


def _noise(params: dict) -> float:
    sd = float(params.get("noise_sd", 0.1))
    if sd < 0:
        raise ParameterError("noise_sd must be nonnegative")
    return sd


def gen_stream(spec: dict, T: int, d: int, seed: int) -> GeneratedStream:
    """Draw a stream and its ground-truth comparator.

    ``spec`` holds ``kind`` and the generator parameters:

    - ``iid_linear``: ``u`` (random if absent), ``noise_sd``
    - ``piecewise``: ``u_list``, ``switch_times`` (rounds where a new
      segment starts), ``noise_sd``
    - ``drift``: ``step_sd``, ``noise_sd``
    - ``sign_flip``: ``Y``; requires ``d = 1``
    - ``adversarial``: ``Y``, ``P``
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ParameterError("stream spec must be a mapping with a 'kind'")
    kind = spec["kind"]
    params = spec.get("params", {}) or {}
    if kind not in KINDS:
        raise ParameterError(f"unknown stream kind {kind!r}")
    if int(T) != T or T < 1 or int(d) != d or d < 1:
        raise ParameterError("T and d must be positive integers")
    rng = make_rng(seed)

    if kind == "adversarial":
        stream, comp, _ = adversarial_stream(d, T, float(params.get("Y", 1.0)), float(params["P"]), seed)
        return GeneratedStream(stream, comp)

    if kind == "sign_flip":
        if d != 1:
            raise ParameterError("sign_flip streams are one-dimensional")
        Y = float(params.get("Y", 1.0))
        y = np.where(np.arange(T) < T // 2, -Y, Y)
        return GeneratedStream(Stream(np.ones((T, 1)), y), ComparatorSequence(y[:, None].copy()), (T // 2,))

    X = _features(rng, T, d)
    noise_sd = _noise(params)
    segments: tuple[int, ...] = ()
    if kind == "iid_linear":
        U = np.tile(_vector(params.get("u"), d, rng, "u"), (T, 1))
    elif kind == "piecewise":
        switches = [int(s) for s in params.get("switch_times", [T // 2])]
        if any(b <= a for a, b in zip(switches, switches[1:])) or any(not 0 < s < T for s in switches):
            raise ParameterError("switch_times must be increasing and inside (0, T)")
        u_list = params.get("u_list")
        if u_list is None:
            u_list = [None] * (len(switches) + 1)
        if len(u_list) != len(switches) + 1:
            raise ParameterError("u_list needs one more entry than switch_times")
        vecs = [_vector(u, d, rng, "u_list entry") for u in u_list]
        seg = np.searchsorted(np.asarray(switches), np.arange(T), side="right")
        U = np.stack(vecs)[seg]
        segments = tuple(switches)
    else:  # drift
        step_sd = float(params.get("step_sd", 0.05))
        if step_sd < 0:
            raise ParameterError("step_sd must be nonnegative")
        steps = rng.normal(scale=step_sd, size=(T, d))
        steps[0] = rng.normal(size=d)
        U = np.cumsum(steps, axis=0)
    y = np.einsum("td,td->t", X, U) + noise_sd * rng.normal(size=T)
    return GeneratedStream(Stream(X, y), ComparatorSequence(U), segments)


def piecewise_fit(stream: Stream, lam: float, switches) -> ComparatorSequence:
    """Per-segment ridge minimizers ``argmin lam/2 |u|^2 + sum l_t(u)``."""
    T, d = stream.X.shape
    bounds = [0, *sorted(int(s) for s in switches if 0 < int(s) < T), T]
    U = np.empty((T, d))
    for a, b in zip(bounds[:-1], bounds[1:]):
        Xs, ys = stream.X[a:b], stream.y[a:b]
        U[a:b] = np.linalg.solve(lam * np.eye(d) + Xs.T @ Xs, Xs.T @ ys)
    return ComparatorSequence(U)
