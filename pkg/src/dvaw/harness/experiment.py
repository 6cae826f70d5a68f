"""Experiment configuration, execution and offline verification.

A run directory holds:

``config.json``      resolved configuration (seed included)
``stream.csv``       ``t,y,x1..xd``
``comparator.csv``   ``t,u1..ud``
``trace.csv``        one row per (learner, round)
``hints.csv``        hints used by single-discount learners
``meta.csv``         reference point, radius, alpha and beta of each ensemble
``learners.json``    learner identifiers, discounts and expert layout
``reports.json``     bound checks
``failures.json``    the failing subset of the checks

Rounds are 0-indexed in every file. :func:`verify` recomputes all checks
from these files alone.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ParameterError, SchemaError
from ..hinting import RefPolicy, TrustRegion, update_radius
from ..oracle import (
    BoundReport,
    ComparatorSequence,
    bound_fixed_share,
    bound_general_dvaw,
    solve_gamma_smallloss,
    solve_gamma_star,
)
from ..stream import Stream
from ..tuner import (
    HINT_MODES,
    ForecasterExpert,
    GreedyAlias,
    build_grid,
    geometric_cover,
    partition_interval,
    run_flat_grid,
    run_strongly_adaptive,
)
from . import io as fio
from .streams import gen_stream, piecewise_fit

CONFIG_KEYS = ("d", "T", "lambda", "b", "hint_mode", "ref_policy", "stream_spec", "learners", "comparator_spec")
LEARNER_KINDS = ("single_gamma", "oracle_gamma", "flat_grid", "strongly_adaptive")
COMPARATOR_KINDS = ("true-weights", "piecewise-fit", "custom")
TRACE_HEADER = ("t", "learner_id", "prediction", "y", "loss", "cumulative_loss", "cumulative_regret_vs_comparator")
CHECK_RTOL = 1e-9


@dataclass(frozen=True, slots=True)
class TraceRow:
    t: int
    learner_id: str
    prediction: float
    y: float
    loss: float
    cumulative_loss: float
    cumulative_regret_vs_comparator: float


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    ``ref_policy`` is a kind name, or a mapping ``{"kind": "external",
    "values": [...]}``. ``stream_spec`` must carry an integer ``seed``.
    """

    d: int
    T: int
    lam: float
    b: float
    hint_mode: str
    ref_policy: object
    stream_spec: dict
    learners: tuple
    comparator_spec: dict

    @property
    def seed(self) -> int:
        return int(self.stream_spec["seed"])

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ParameterError("config must be a JSON object")
        extra = set(obj) - set(CONFIG_KEYS) - {"format_version"}
        missing = set(CONFIG_KEYS) - set(obj) - {"comparator_spec"}
        if extra:
            raise ParameterError(f"unknown config keys {sorted(extra)}")
        if missing:
            raise ParameterError(f"missing config keys {sorted(missing)}")
        if obj.get("format_version", fio.FORMAT_VERSION) != fio.FORMAT_VERSION:
            raise ParameterError("unsupported config format_version")
        cfg = cls(
            d=obj["d"],
            T=obj["T"],
            lam=float(obj["lambda"]),
            b=float(obj["b"]),
            hint_mode=obj["hint_mode"],
            ref_policy=copy.deepcopy(obj["ref_policy"]),
            stream_spec=copy.deepcopy(obj["stream_spec"]),
            learners=tuple(copy.deepcopy(obj["learners"])),
            comparator_spec=copy.deepcopy(obj.get("comparator_spec") or {"kind": "true-weights"}),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.d, int) or self.d < 1 or not isinstance(self.T, int) or self.T < 1:
            raise ParameterError("d and T must be positive integers")
        if not self.lam > 0:
            raise ParameterError("lambda must be positive")
        if not self.b > 1:
            raise ParameterError("b must exceed 1")
        if self.hint_mode not in HINT_MODES:
            raise ParameterError(f"hint_mode must be one of {HINT_MODES}")
        self.make_ref_policy()
        if not isinstance(self.stream_spec, dict) or "seed" not in self.stream_spec:
            raise ParameterError("stream_spec must include a seed")
        seed = self.stream_spec["seed"]
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ParameterError("seed must be an integer in [0, 2^64)")
        if not self.learners:
            raise ParameterError("at least one learner is required")
        ids = [learner_id(spec) for spec in self.learners]
        if len(set(ids)) != len(ids):
            raise ParameterError("learner ids must be unique")
        for spec in self.learners:
            kind = spec.get("kind")
            if kind not in LEARNER_KINDS:
                raise ParameterError(f"unknown learner kind {kind!r}")
            if kind == "single_gamma" and not 0 <= float(spec.get("gamma", -1)) <= 1:
                raise ParameterError("single_gamma learners need gamma in [0, 1]")
        if self.comparator_spec.get("kind") not in COMPARATOR_KINDS:
            raise ParameterError(f"comparator kind must be one of {COMPARATOR_KINDS}")

    def make_ref_policy(self) -> RefPolicy:
        rp = self.ref_policy
        if isinstance(rp, str):
            return RefPolicy(rp)
        if isinstance(rp, dict):
            return RefPolicy(rp.get("kind", ""), rp.get("values"))
        raise ParameterError("ref_policy must be a string or a mapping")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        spec = dict(self.stream_spec, seed=int(seed))
        cfg = ExperimentConfig(**{**self.__dict__, "stream_spec": spec})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "format_version": fio.FORMAT_VERSION,
            "d": self.d,
            "T": self.T,
            "lambda": self.lam,
            "b": self.b,
            "hint_mode": self.hint_mode,
            "ref_policy": self.ref_policy,
            "stream_spec": self.stream_spec,
            "learners": list(self.learners),
            "comparator_spec": self.comparator_spec,
        }


def learner_id(spec: dict) -> str:
    if "id" in spec:
        return str(spec["id"])
    if spec.get("kind") == "single_gamma":
        return f"gamma={float(spec.get('gamma', 0.0))!r}"
    return str(spec.get("kind"))


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParameterError(f"cannot read config: {exc}") from exc
    return ExperimentConfig.from_dict(obj)


# ---------------------------------------------------------------- running


def _comparator(cfg: ExperimentConfig, stream: Stream, truth: ComparatorSequence, segments) -> ComparatorSequence:
    spec = cfg.comparator_spec
    kind = spec["kind"]
    if kind == "true-weights":
        return truth
    if kind == "piecewise-fit":
        return piecewise_fit(stream, cfg.lam, spec.get("switch_times", segments))
    path = spec.get("path")
    if not path:
        raise ParameterError("custom comparator needs a path")
    header, rows = fio.read_csv(Path(path), ["t"])
    U = np.array([[float(v) for v in r[1:]] for r in rows])
    if U.shape != stream.X.shape:
        raise ParameterError("custom comparator shape does not match the stream")
    return ComparatorSequence(U)


def _drive(expert, stream: Stream, ref: RefPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Run one sub-learner alone with its own trust-region bookkeeping."""
    T = len(stream)
    preds, hints = np.empty(T), np.empty(T)
    radius, prev_y = 0.0, None
    for t in range(T):
        region = TrustRegion(ref.reference(t, prev_y), radius)
        out = expert.begin_round(stream.X[t], region)
        preds[t], hints[t] = out.prediction, out.hint_used
        expert.end_round(stream.y[t])
        radius = update_radius(region, stream.y[t]).radius
        prev_y = float(stream.y[t])
    return preds, hints


def _single(gamma: float, cfg: ExperimentConfig, stream: Stream, ref: RefPolicy):
    expert = GreedyAlias() if gamma == 0 else ForecasterExpert(cfg.d, cfg.lam, gamma, cfg.hint_mode)
    return _drive(expert, stream, ref)


def _reference_hints(stream: Stream, ref: RefPolicy) -> np.ndarray:
    hints = np.array([ref.reference(t, stream.y[t - 1] if t else None) for t in range(len(stream))])
    if len(hints):
        hints[0] = 0.0
    return hints


@dataclass
class _Outputs:
    trace: list = field(default_factory=list)
    hints: list = field(default_factory=list)
    meta: list = field(default_factory=list)
    learners: list = field(default_factory=list)


def _trace_rows(lid: str, ts, preds, stream: Stream, comp_loss: np.ndarray) -> list[tuple]:
    ts = np.asarray(ts, dtype=int)
    y = stream.y[ts]
    loss = 0.5 * (y - np.asarray(preds)) ** 2
    cum = np.cumsum(loss)
    reg = np.cumsum(loss - comp_loss[ts])
    return [(int(t), lid, float(p), float(yy), float(l), float(c), float(r)) for t, p, yy, l, c, r in zip(ts, preds, y, loss, cum, reg)]


def _meta_rows(lid: str, trace) -> list[tuple]:
    return [
        (t, lid, float(trace.y_ref[t]), float(trace.radius[t]), float(trace.alpha[t]), float(trace.beta[t]))
        for t in range(len(trace.y_ref))
    ]


def _run_learners(cfg: ExperimentConfig, stream: Stream, comp: ComparatorSequence) -> _Outputs:
    ref = cfg.make_ref_policy()
    comp_loss = 0.5 * (stream.y - np.einsum("td,td->t", stream.X, comp.u)) ** 2
    T = len(stream)
    all_t = np.arange(T)
    out = _Outputs()
    for spec in cfg.learners:
        lid, kind = learner_id(spec), spec["kind"]
        if kind in ("single_gamma", "oracle_gamma"):
            if kind == "single_gamma":
                gamma = float(spec["gamma"])
            elif cfg.hint_mode == "external":
                gamma = solve_gamma_star(stream, comp, cfg.lam, _reference_hints(stream, ref))
            else:
                gmin = 2 * cfg.d / (2 * cfg.d + 1)
                gamma = max(solve_gamma_smallloss(stream, comp, cfg.lam), gmin)
            preds, hints = _single(gamma, cfg, stream, ref)
            out.trace += _trace_rows(lid, all_t, preds, stream, comp_loss)
            out.hints += [(t, lid, float(h)) for t, h in enumerate(hints)]
            out.learners.append({"id": lid, "kind": kind, "gamma": gamma})
        elif kind == "flat_grid":
            trace = run_flat_grid(cfg.d, cfg.T, cfg.lam, cfg.b, cfg.hint_mode, ref, stream)
            grid = build_grid(cfg.d, cfg.T, cfg.b)
            out.trace += _trace_rows(lid, all_t, trace.y_bar, stream, comp_loss)
            out.meta += _meta_rows(lid, trace)
            experts = []
            for j, g in enumerate(grid.gammas):
                eid = f"{lid}/gamma={g!r}"
                out.trace += _trace_rows(eid, all_t, trace.raw[:, j], stream, comp_loss)
                experts.append({"id": eid, "gamma": g})
            out.learners.append({"id": lid, "kind": kind, "gamma": None, "experts": experts})
        else:
            trace = run_strongly_adaptive(cfg.d, cfg.T, cfg.lam, cfg.b, cfg.hint_mode, ref, stream)
            out.trace += _trace_rows(lid, all_t, trace.y_bar, stream, comp_loss)
            out.meta += _meta_rows(lid, trace)
            lookup = {(iv.level, iv.k): i for i, iv in enumerate(trace.intervals)}
            checks = spec.get("check_intervals", [[0, T - 1]])
            pieces = []
            for s, tau in checks:
                for piece in partition_interval(int(s), int(tau), cfg.T):
                    if (piece.start, piece.end) not in pieces:
                        pieces.append((piece.start, piece.end))
            experts = []
            for a, b in pieces:
                level = (b - a + 1).bit_length() - 1
                iv_idx = lookup[(level, a >> level)]
                for g_idx, g in enumerate(trace.grid.gammas):
                    j = trace.expert_index(iv_idx, g_idx)
                    eid = f"{lid}/gamma={g!r}@{a}-{b}"
                    out.trace += _trace_rows(eid, np.arange(a, b + 1), trace.inside[j]["raw"], stream, comp_loss)
                    experts.append({"id": eid, "gamma": g, "interval": [a, b]})
            out.learners.append(
                {
                    "id": lid,
                    "kind": kind,
                    "gamma": None,
                    "n_experts": trace.n_experts,
                    "pieces": [list(p) for p in pieces],
                    "experts": experts,
                }
            )
    return out


def simulate(cfg: ExperimentConfig, out_dir) -> tuple[Stream, ComparatorSequence]:
    """Write the configuration, stream and comparator files."""
    out_dir = Path(out_dir)
    gen = gen_stream(cfg.stream_spec, cfg.T, cfg.d, cfg.seed)
    comp = _comparator(cfg, gen.stream, gen.comparator, gen.segments)
    d = cfg.d
    fio.write_json(out_dir / "config.json", cfg.to_dict())
    fio.write_csv(
        out_dir / "stream.csv",
        ["t", "y", *[f"x{i + 1}" for i in range(d)]],
        ([t, gen.stream.y[t], *gen.stream.X[t]] for t in range(cfg.T)),
        cfg.seed,
    )
    fio.write_csv(
        out_dir / "comparator.csv",
        ["t", *[f"u{i + 1}" for i in range(d)]],
        ([t, *comp.u[t]] for t in range(cfg.T)),
        cfg.seed,
    )
    return gen.stream, comp


@dataclass
class RunResult:
    exit_code: int
    reports: list
    problems: list
    out_dir: Path


def run_experiment(cfg: ExperimentConfig, out_dir, *, check: bool = True) -> RunResult:
    """Generate the stream, run every learner, write traces and (optionally) checks."""
    out_dir = Path(out_dir)
    stream, comp = simulate(cfg, out_dir)
    res = _run_learners(cfg, stream, comp)
    seed = cfg.seed
    fio.write_csv(out_dir / "trace.csv", TRACE_HEADER, res.trace, seed)
    fio.write_csv(out_dir / "hints.csv", ("t", "learner_id", "hint"), res.hints, seed)
    fio.write_csv(out_dir / "meta.csv", ("t", "learner_id", "y_ref", "radius", "alpha", "beta"), res.meta, seed)
    fio.write_json(out_dir / "learners.json", {"format_version": fio.FORMAT_VERSION, "seed": seed, "learners": res.learners})
    reports, problems = (evaluate_checks(out_dir) if check else ([], []))
    _write_verdicts(out_dir, seed, reports, problems)
    ok = all(r["passed"] for r in reports) and not problems
    return RunResult(0 if ok else 1, reports, problems, out_dir)


def _write_verdicts(out_dir: Path, seed: int, reports: list, problems: list) -> None:
    fio.write_json(out_dir / "reports.json", {"format_version": fio.FORMAT_VERSION, "seed": seed, "reports": reports})
    failures = [
        {k: r[k] for k in ("check", "learner_id", "context", "lhs", "rhs", "slack")}
        for r in reports
        if not r["passed"]
    ]
    fio.write_json(
        out_dir / "failures.json",
        {"format_version": fio.FORMAT_VERSION, "seed": seed, "failures": failures, "problems": problems},
    )


# ---------------------------------------------------------------- verification


@dataclass
class _Files:
    cfg: ExperimentConfig
    stream: Stream
    U: np.ndarray
    trace: dict
    hints: dict
    meta: dict
    learners: list


def _group(rows: list[list[str]], cols: int) -> dict:
    out: dict[str, list] = {}
    for r in rows:
        out.setdefault(r[1], []).append([int(r[0])] + [float(v) for v in r[2 : 2 + cols]])
    return {k: np.array(v) for k, v in out.items()}


def _load(out_dir: Path) -> _Files:
    cfg_obj = fio.read_json(out_dir / "config.json")
    try:
        cfg = ExperimentConfig.from_dict(cfg_obj)
    except ParameterError as exc:
        raise SchemaError(f"config.json: {exc}") from exc
    d = cfg.d
    _, srows = fio.read_csv(out_dir / "stream.csv", ["t", "y", *[f"x{i + 1}" for i in range(d)]])
    _, crows = fio.read_csv(out_dir / "comparator.csv", ["t", *[f"u{i + 1}" for i in range(d)]])
    _, trows = fio.read_csv(out_dir / "trace.csv", TRACE_HEADER)
    _, hrows = fio.read_csv(out_dir / "hints.csv", ["t", "learner_id", "hint"])
    _, mrows = fio.read_csv(out_dir / "meta.csv", ["t", "learner_id", "y_ref", "radius", "alpha", "beta"])
    if not srows:
        raise SchemaError("stream.csv is empty")
    if not trows:
        raise SchemaError("trace.csv is empty")
    S = np.array([[float(v) for v in r] for r in srows])
    C = np.array([[float(v) for v in r] for r in crows])
    if not (np.array_equal(S[:, 0], np.arange(len(S))) and np.array_equal(C[:, 0], np.arange(len(S)))):
        raise SchemaError("stream and comparator rounds must be 0..T-1")
    if len(S) != cfg.T:
        raise SchemaError("stream length differs from T")
    learners = fio.read_json(out_dir / "learners.json")["learners"]
    return _Files(cfg, Stream(S[:, 2:], S[:, 1]), C[:, 1:], _group(trows, 5), _group(hrows, 1), _group(mrows, 4), learners)


def _report(check: str, lid: str, context: dict, bound: BoundReport) -> dict:
    lhs, rhs = float(bound.lhs), float(bound.rhs)
    tol = CHECK_RTOL * max(1.0, abs(lhs), abs(rhs))
    return {
        "check": check,
        "learner_id": lid,
        "context": context,
        "lhs": lhs,
        "rhs": rhs,
        "slack": rhs - lhs,
        "passed": bool(lhs <= rhs + tol),
        "terms": {k: float(v) for k, v in bound.terms.items()},
    }


def _integrity(f: _Files) -> list[str]:
    """Trace rows must agree with the stream and have exact prefix sums."""
    problems = []
    comp_loss = 0.5 * (f.stream.y - np.einsum("td,td->t", f.stream.X, f.U)) ** 2
    for lid, rows in f.trace.items():
        t = rows[:, 0].astype(int)
        pred, y, loss, cum, reg = rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4], rows[:, 5]
        if np.any(t < 0) or np.any(t >= len(f.stream)) or np.any(np.diff(t) != 1):
            problems.append(f"{lid}: rounds are not consecutive")
            continue
        if not np.array_equal(y, f.stream.y[t]):
            problems.append(f"{lid}: labels differ from stream.csv")
        scale = 1e-12 * np.maximum(1.0, np.abs(loss))
        if np.any(np.abs(loss - 0.5 * (y - pred) ** 2) > scale):
            problems.append(f"{lid}: loss column inconsistent with predictions")
        if np.any(np.abs(np.cumsum(loss) - cum) > 1e-9 * np.maximum(1.0, np.abs(cum))):
            problems.append(f"{lid}: cumulative_loss is not the prefix sum of loss")
        ref = np.cumsum(loss - comp_loss[t])
        if np.any(np.abs(ref - reg) > 1e-9 * np.maximum(1.0, np.abs(cum))):
            problems.append(f"{lid}: cumulative regret is not the prefix sum of loss minus comparator loss")
    return problems


def _need(table: dict, lid: str, name: str) -> np.ndarray:
    if lid not in table:
        raise SchemaError(f"{name} has no rows for {lid}")
    return table[lid]


def evaluate_checks(out_dir) -> tuple[list[dict], list[str]]:
    """Recompute every bound check from the files in ``out_dir``."""
    f = _load(Path(out_dir))
    cfg, stream, U = f.cfg, f.stream, f.U
    problems = _integrity(f)
    reports = []
    T = len(stream)
    comp_loss = 0.5 * (stream.y - np.einsum("td,td->t", stream.X, U)) ** 2
    for entry in f.learners:
        lid, kind = entry["id"], entry["kind"]
        rows = _need(f.trace, lid, "trace.csv")
        if len(rows) != T:
            raise SchemaError(f"trace.csv: {lid} must have T rows")
        if kind in ("single_gamma", "oracle_gamma"):
            gamma = float(entry["gamma"])
            hints = _need(f.hints, lid, "hints.csv")[:, 1]
            if gamma > 0 and hints[0] == 0:
                bound = bound_general_dvaw(stream, U, gamma, cfg.lam, hints, rows[:, 1])
                reports.append(_report("general_dvaw", lid, {"gamma": gamma}, bound))
            continue
        meta = _need(f.meta, lid, "meta.csv")
        y_ref, radius, alpha, beta = meta[:, 1], meta[:, 2], meta[:, 3], meta[:, 4]
        meta_loss = rows[:, 3]
        if kind == "flat_grid":
            n = len(entry["experts"])
            fs = bound_fixed_share(alpha[-1], beta[-1], 1.0 / n)
            clip_term = 0.5 * float(np.max((stream.y - y_ref) ** 2))
            best, worst_meta = math.inf, -math.inf
            for e in entry["experts"]:
                raw = _need(f.trace, e["id"], "trace.csv")[:, 1]
                lo, hi = y_ref - radius, y_ref + radius
                clipped = np.minimum(np.maximum(raw, lo), hi)
                best = min(best, float(np.sum(0.5 * (stream.y - raw) ** 2 - comp_loss)))
                worst_meta = max(worst_meta, float(np.sum(meta_loss - 0.5 * (stream.y - clipped) ** 2)))
            regret = float(np.sum(meta_loss - comp_loss))
            terms = {"clip_term": clip_term, "best_expert_regret": best, "fixed_share_term": fs}
            reports.append(_report("meta_decomposition", lid, {}, BoundReport(regret, sum(terms.values()), terms)))
            reports.append(_report("fixed_share", lid, {}, BoundReport(worst_meta, fs, {"fixed_share_term": fs})))
        elif kind == "strongly_adaptive":
            n = int(entry["n_experts"])
            expected = len(build_grid(cfg.d, cfg.T, cfg.b).gammas) * len(geometric_cover(cfg.T))
            if n != expected:
                problems.append(f"{lid}: n_experts {n} differs from grid x cover size {expected}")
            by_piece: dict[tuple, list] = {}
            for e in entry["experts"]:
                by_piece.setdefault(tuple(e["interval"]), []).append(e)
            for (a, b), experts in by_piece.items():
                sl = slice(a, b + 1)
                fs = bound_fixed_share(alpha[min(b + 1, T - 1)], beta[b], 1.0 / n)
                clip_term = 0.5 * float(np.max((stream.y[: b + 1] - y_ref[: b + 1]) ** 2))
                best = math.inf
                for e in experts:
                    raw = _need(f.trace, e["id"], "trace.csv")[:, 1]
                    best = min(best, float(np.sum(0.5 * (stream.y[sl] - raw) ** 2 - comp_loss[sl])))
                regret = float(np.sum(meta_loss[sl] - comp_loss[sl]))
                terms = {"clip_term": clip_term, "best_expert_regret": best, "fixed_share_term": fs}
                reports.append(
                    _report("interval_decomposition", lid, {"interval": [a, b]}, BoundReport(regret, sum(terms.values()), terms))
                )
        else:
            raise SchemaError(f"learners.json: unknown kind {kind!r}")
    return reports, problems


@dataclass
class VerifyResult:
    ok: bool
    reports: list
    problems: list


def verify(out_dir) -> VerifyResult:
    """Recheck a run directory and compare with the stored verdicts, if any."""
    out_dir = Path(out_dir)
    reports, problems = evaluate_checks(out_dir)
    stored_path = out_dir / "reports.json"
    if stored_path.exists():
        stored = fio.read_json(stored_path).get("reports", [])
        key = lambda r: (r["check"], r["learner_id"], repr(r.get("context")))  # noqa: E731
        old = {key(r): r["passed"] for r in stored}
        for r in reports:
            if key(r) in old and old[key(r)] != r["passed"]:
                problems.append(f"verdict changed for {r['check']} / {r['learner_id']}")
    ok = all(r["passed"] for r in reports) and not problems
    return VerifyResult(ok, reports, problems)
