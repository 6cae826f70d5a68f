"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line (shown in the terminal summary
and, with ``-s``, inline) before asserting.
"""

from __future__ import annotations

import math
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from dvaw import (
    MDSnapshot,
    RefPolicy,
    Stream,
    StreamRecord,
    adversarial_stream,
    bound_fixed_share,
    bound_general_dvaw,
    dynamic_regret,
    ftrl_solve,
    geometric_cover,
    init,
    md_step,
    partition_interval,
    run_flat_grid,
    run_strongly_adaptive,
    solve_gamma_smallloss,
    solve_gamma_star,
)
from dvaw.harness import gen_stream
from dvaw.meta import run_clipped_meta
from dvaw.oracle import (
    best_fixed_comparator,
    fixed_point_residual_smallloss,
    fixed_point_residual_star,
    losses,
    naive_variability,
    replay,
)
from dvaw.tuner import build_grid, make_bank

from oracles import closed_form_weights, variability_loop, vaw_weights


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{num:02d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _ball_features(rng, T, d):
    X = rng.normal(size=(T, d))
    X *= (rng.uniform(0, 1, T) ** (1 / d) / np.linalg.norm(X, axis=1))[:, None]
    return X


def _piecewise_instance(rng, T, d, max_switches=4, y_cap=2.0):
    """Stream with |y| <= y_cap, |x| <= 1 and a random piecewise comparator."""
    X = _ball_features(rng, T, d)
    k = int(rng.integers(0, max_switches + 1))
    cuts = np.sort(rng.choice(np.arange(1, T), size=k, replace=False))
    seg = np.searchsorted(cuts, np.arange(T), side="right")
    U = rng.uniform(-1.5, 1.5, size=(k + 1, d))[seg]
    y = np.clip(np.einsum("td,td->t", X, U) + 0.3 * rng.normal(size=T), -y_cap, y_cap)
    return Stream(X, y), U


def _rel(a, b):
    scale = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / scale


def test_01_update_equivalence():
    rng = np.random.default_rng(101)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(200):
        d = int(rng.integers(1, 6))
        T = int(rng.integers(1, 51))
        gamma = float(rng.choice([0.1, 0.5, 0.9, 1.0]))
        lam = float(rng.choice([0.1, 1.0, 10.0]))
        X = _ball_features(rng, T, d)
        y = rng.uniform(-2, 2, T)
        hints = rng.uniform(-2, 2, T)
        hints[0] = 0.0
        state = init(d, lam, gamma)
        snap = MDSnapshot(lam * np.eye(d), np.zeros(d), gamma)
        hist: list[StreamRecord] = []
        prev, prev_hint = None, 0.0
        for t in range(T):
            w_inc = state.begin_round(X[t], hints[t]).weights
            w_ftrl = ftrl_solve(hist, gamma, lam, X[t], hints[t])
            w_md = md_step(snap, prev, prev_hint, X[t], hints[t])
            w_cf = closed_form_weights(X, y, t, gamma, lam, hints[t])
            for a, b in ((w_inc, w_cf), (w_ftrl, w_cf), (w_md, w_cf), (w_inc, w_md)):
                worst = max(worst, _rel(a, b))
            snap = MDSnapshot(np.outer(X[t], X[t]) + gamma * snap.sigma, w_md, gamma)
            prev, prev_hint = StreamRecord(X[t], y[t]), hints[t]
            hist.append(prev)
            state.end_round(y[t])
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10
    _report(1, "update equivalence", ok, f"max rel discrepancy {worst:.2e} (<= 1e-6), {elapsed:.2f} s (< 10 s)")
    assert ok


def test_02_vaw_reduction():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 6))
        T = int(rng.integers(1, 51))
        lam = float(rng.choice([0.1, 1.0, 10.0]))
        X = _ball_features(rng, T, d)
        y = rng.uniform(-2, 2, T)
        state = init(d, lam, 1.0)
        for t in range(T):
            w = state.begin_round(X[t], 0.0).weights
            worst = max(worst, _rel(w, vaw_weights(X, y, t, lam)))
            state.end_round(y[t])
    ok = worst <= 1e-10
    _report(2, "VAW reduction", ok, f"max rel discrepancy {worst:.2e} (<= 1e-10) on 50 instances")
    assert ok


def test_03_general_bound():
    rng = np.random.default_rng(103)
    gammas = (0.2, 0.5, 0.8, 0.9, 0.99, 1.0)
    violations = checks = 0
    min_slack = math.inf
    for _ in range(100):
        d = int(rng.integers(1, 4))
        stream, U = _piecewise_instance(rng, 200, d)
        y = stream.y
        hint_sets = {
            "zero": np.zeros(200),
            "previous": np.concatenate([[0.0], y[:-1]]),
            "noisy": y + 0.2 * rng.normal(size=200),
            "uniform": rng.uniform(-2, 2, 200),
        }
        for hints in hint_sets.values():
            hints[0] = 0.0
            for g in gammas:
                rep = bound_general_dvaw(stream, U, g, 1.0, hints, replay(stream, g, 1.0, hints))
                checks += 1
                min_slack = min(min_slack, rep.slack)
                violations += not rep.passed
    ok = violations == 0
    _report(3, "general discounted bound", ok, f"{violations} violations in {checks} checks, min slack {min_slack:.3g}")
    assert ok


def test_04_clipping_lemma():
    rng = np.random.default_rng(104)
    worst = -math.inf
    rounds = 0
    for i in range(100):
        d = int(rng.integers(1, 4))
        stream, _ = _piecewise_instance(rng, 200, d)
        mode = "external" if i % 2 == 0 else "self_confident"
        tr = run_flat_grid(d, 200, 1.0, 2.0, mode, RefPolicy(), stream)
        y = stream.y[:, None]
        m_now = tr.radius[:, None]
        m_next = np.maximum(tr.radius, np.abs(stream.y - tr.y_ref))[:, None]
        lhs = (y - tr.clipped) ** 2
        rhs = np.minimum(4 * m_next**2, (y - tr.raw) ** 2 + m_next**2 - m_now**2)
        worst = max(worst, float(np.max(lhs - rhs)))
        rounds += lhs.size
    ok = worst <= 1e-9
    _report(4, "clipping lemma", ok, f"max(lhs - rhs) = {worst:.2e} (<= 1e-9) over {rounds} expert-rounds")
    assert ok


def test_05_fixed_share_intervals():
    rng = np.random.default_rng(105)
    T = 200
    start = time.perf_counter()
    violations = checked = 0
    worst = -math.inf
    upper = np.triu(np.ones((T, T), dtype=bool))
    for i in range(20):
        d = int(rng.integers(1, 3))
        stream, _ = _piecewise_instance(rng, T, d)
        grid = build_grid(d, T, 4.0)
        bank = make_bank(grid, 1.0, "external" if i % 2 else "self_confident")[:8]
        tr = run_clipped_meta(bank, RefPolicy(), stream)
        N = tr.n_experts
        assert N <= 8
        gap = tr.meta_loss[:, None] - tr.expert_loss
        C = np.vstack([np.zeros((1, N)), np.cumsum(gap, axis=0)])
        # R[a, b, j] = sum_{t=a}^{b} gap[t, j]
        R = C[None, 1:, :] - C[:-1, None, :]
        bound = np.array([bound_fixed_share(tr.alpha_after(b), tr.beta_after(b), 1.0 / N) for b in range(T)])
        excess = np.where(upper[:, :, None], R - bound[None, :, None], -np.inf)
        violations += int(np.sum(excess > 0))
        checked += int(upper.sum()) * N
        worst = max(worst, float(excess.max()))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 60
    _report(
        5,
        "fixed-share interval bound",
        ok,
        f"{violations} violations in {checked} (interval, expert) pairs, max excess {worst:.3g}, {elapsed:.2f} s (< 60 s)",
    )
    assert ok


def _profile_on_grid(stream, U, lam, grid):
    """P^gamma on a gamma grid, evaluated as polynomials in gamma."""
    T = len(stream)
    table = np.empty((T + 1, T))
    table[0] = 0.5 * lam * np.sum(U**2, axis=1)
    table[1:] = 0.5 * (stream.y[:, None] - stream.X @ U.T) ** 2
    total = np.zeros_like(grid)
    for t in range(1, T):
        pos = np.maximum(table[: t + 1, t] - table[: t + 1, t - 1], 0.0)
        if not np.any(pos > 0):
            continue
        # highest power first: s = 0 carries gamma^t
        num = np.polyval(pos, grid)
        den = np.polyval(np.ones(t + 1), grid)
        total += num / den
    return total


def _grid_root_cells(root_v, profile_vals, grid):
    g = grid * (root_v + np.sqrt(profile_vals)) - root_v
    sign = np.sign(g)
    return [i for i in range(len(grid) - 1) if sign[i] <= 0 <= sign[i + 1] or sign[i] >= 0 >= sign[i + 1]]


def test_06_fixed_point_solvers():
    rng = np.random.default_rng(106)
    grid = np.linspace(0.0, 1.0, 10_001)
    h = grid[1] - grid[0]
    worst_res, worst_cell = 0.0, 0.0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        stream, U = _piecewise_instance(rng, 40, d, max_switches=3)
        lam = float(rng.choice([0.1, 1.0, 10.0]))
        hints = np.concatenate([[0.0], stream.y[:-1]])
        prof = _profile_on_grid(stream, U, lam, grid)
        # anchor the polynomial evaluation to the plain double loop
        for probe in (0, 5000, 10_000):
            ref = variability_loop(stream.X, stream.y, U, grid[probe], lam)
            assert abs(prof[probe] - ref) <= 1e-9 * max(1.0, abs(ref))
        v_star = 0.5 * d * float(np.sum((stream.y - hints) ** 2))
        v_small = d * float(np.sum(losses(stream, U)))
        g_star = solve_gamma_star(stream, U, lam, hints)
        g_small = solve_gamma_smallloss(stream, U, lam)
        cases = (
            (g_star, v_star, fixed_point_residual_star(stream, U, lam, hints, g_star)),
            (g_small, v_small, fixed_point_residual_smallloss(stream, U, lam, g_small)),
        )
        for gamma, v, res in cases:
            root_v = math.sqrt(v)
            worst_res = max(worst_res, res)
            if root_v == 0 or not np.any(prof > 0):
                continue  # degenerate: the root is an endpoint, covered by the residual
            cells = _grid_root_cells(root_v, prof, grid)
            dist = min(
                0.0 if grid[i] <= gamma <= grid[i + 1] else min(abs(gamma - grid[i]), abs(gamma - grid[i + 1]))
                for i in cells
            )
            worst_cell = max(worst_cell, dist / h)
    ok = worst_res <= 1e-6 and worst_cell <= 1.0
    _report(
        6,
        "fixed-point solvers",
        ok,
        f"max residual {worst_res:.2e} (<= 1e-6), max distance to grid-scan root cell {worst_cell:.3f} cells (<= 1)",
    )
    assert ok


def test_07_adversarial_instance():
    rng = np.random.default_rng(107)
    worst_loss = worst_rel = 0.0
    var_excess = -math.inf
    for i in range(100):
        d = int(rng.integers(1, 5))
        T = int(rng.integers(d, 400))
        Y = float(rng.uniform(0.5, 3.0))
        P = float(rng.uniform(0.01, 1.0)) * 2 * T * Y**2 / d
        stream, comp, sigma = adversarial_stream(d, T, Y, P, seed=i)
        worst_loss = max(worst_loss, float(np.max(losses(stream, comp.u))))
        var_excess = max(var_excess, naive_variability(stream, comp, 1.0) - P)
        expect = 0.5 * T * Y**2 * sigma**2
        worst_rel = max(worst_rel, abs(dynamic_regret(np.zeros(T), stream, comp) - expect) / expect)
    ok = worst_loss == 0.0 and var_excess <= 0 and worst_rel <= 1e-9
    _report(
        7,
        "adversarial instance",
        ok,
        f"max comparator loss {worst_loss:.1e} (== 0), max(variability - P) {var_excess:.3g} (<= 0), "
        f"zero-predictor regret rel err {worst_rel:.1e} (<= 1e-9)",
    )
    assert ok


def test_08_sign_flip_win():
    T = 2000
    g = gen_stream({"kind": "sign_flip", "params": {"Y": 1.0}}, T, 1, 0)
    vaw = dynamic_regret(replay(g.stream, 1.0, 1.0, np.zeros(T)), g.stream, g.comparator)
    tr = run_flat_grid(1, T, 1.0, 2.0, "external", RefPolicy(), g.stream)
    meta = dynamic_regret(tr.y_bar, g.stream, g.comparator)
    ratio = meta / vaw
    ok = ratio <= 0.10
    _report(8, "non-stationarity win", ok, f"flat-grid regret {meta:.3f} vs VAW {vaw:.3f}, ratio {ratio:.4f} (<= 0.10)")
    assert ok


def test_09_geometric_cover():
    start = time.perf_counter()
    T = 2**14
    cover = geometric_cover(T)
    diff = np.zeros(T + 1, dtype=int)
    for iv in cover:
        diff[iv.start] += 1
        diff[iv.end + 1] -= 1
    max_members = int(np.cumsum(diff)[:T].max())
    rng = np.random.default_rng(109)
    bad = 0
    for _ in range(1000):
        s, tau = sorted(int(v) for v in rng.integers(0, T, 2))
        pieces = partition_interval(s, tau, T)
        covered = [(p.start, p.end) for p in pieces]
        contiguous = covered[0][0] == s and covered[-1][1] == tau and all(
            a[1] + 1 == b[0] for a, b in zip(covered, covered[1:])
        )
        aligned = all(p.start % (1 << p.level) == 0 and len(p) == 1 << p.level for p in pieces)
        small = len(pieces) <= 2 * math.ceil(math.log2(tau - s + 2))
        bad += not (contiguous and aligned and small)
    elapsed = time.perf_counter() - start
    ok = max_members <= 15 and bad == 0 and elapsed < 5
    _report(
        9,
        "geometric cover",
        ok,
        f"max membership {max_members} (<= 15), {bad} bad partitions of 1000, {elapsed:.2f} s (< 5 s)",
    )
    assert ok


def test_10_strongly_adaptive_halves():
    T, d, lam = 512, 2, 1.0
    violations = checks = 0
    min_slack = math.inf
    for seed in range(10):
        g = gen_stream({"kind": "piecewise", "params": {"switch_times": [256], "noise_sd": 0.1}}, T, d, seed)
        s = g.stream
        tr = run_strongly_adaptive(d, T, lam, 2.0, "external", RefPolicy(), s)
        N = tr.n_experts
        lookup = {(iv.start, iv.end): i for i, iv in enumerate(tr.intervals)}
        for a, b in ((0, 255), (256, 511)):
            iv_idx = lookup[(a, b)]
            half = s.window(a, b)
            u = best_fixed_comparator(half)
            regret = float(np.sum(tr.meta_loss[a : b + 1]) - np.sum(losses(half, u)))
            per_gamma = []
            for gi, gamma in enumerate(tr.grid.gammas):
                rec = tr.inside[tr.expert_index(iv_idx, gi)]
                if gamma == 0:
                    per_gamma.append(float(np.sum(0.5 * (half.y - rec["raw"]) ** 2)))
                else:
                    per_gamma.append(bound_general_dvaw(half, u, gamma, lam, rec["hint"], rec["raw"]).rhs)
            fs = bound_fixed_share(tr.alpha_after(b), tr.beta_after(b), 1.0 / N)
            clip_cost = 0.5 * float(np.max((s.y[: b + 1] - tr.y_ref[: b + 1]) ** 2))
            rhs = min(per_gamma) + fs + clip_cost
            checks += 1
            min_slack = min(min_slack, rhs - regret)
            violations += regret > rhs
    ok = violations == 0
    _report(10, "strongly-adaptive halves", ok, f"{violations} violations in {checks} checks over 10 seeds, min slack {min_slack:.3g}")
    assert ok
