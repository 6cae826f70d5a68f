from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from dvaw.errors import ParameterError, SchemaError
from dvaw.harness import ExperimentConfig, gen_stream, run_experiment, simulate, verify
from dvaw.harness.cli import main
from dvaw.oracle import losses

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _piecewise(T: int) -> dict:
    return {"kind": "piecewise", "params": {"switch_times": [T // 2], "noise_sd": 0.1}, "seed": 3}


def _config(**overrides) -> dict:
    base = {
        "format_version": 1,
        "d": 2,
        "T": 64,
        "lambda": 1.0,
        "b": 2.0,
        "hint_mode": "external",
        "ref_policy": "previous_label",
        "stream_spec": {"kind": "piecewise", "params": {"switch_times": [32], "noise_sd": 0.1}, "seed": 3},
        "learners": [
            {"kind": "single_gamma", "gamma": 0.9},
            {"kind": "oracle_gamma"},
            {"kind": "flat_grid"},
            {"kind": "strongly_adaptive"},
        ],
        "comparator_spec": {"kind": "true-weights"},
    }
    base.update(overrides)
    return base


def _rows(path: Path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


class TestGenerators:
    def test_sign_flip_example(self):
        g = gen_stream({"kind": "sign_flip", "params": {"Y": 1.0}}, 4, 1, 0)
        np.testing.assert_array_equal(g.stream.y, [-1, -1, 1, 1])
        np.testing.assert_array_equal(g.stream.X, np.ones((4, 1)))

    def test_piecewise_noiseless_comparator_exact(self):
        g = gen_stream({"kind": "piecewise", "params": {"switch_times": [10, 20], "noise_sd": 0.0}}, 30, 3, 5)
        assert np.max(losses(g.stream, g.comparator.u)) <= 1e-28
        assert len({tuple(r) for r in g.comparator.u}) == 3

    @pytest.mark.parametrize("kind", ["iid_linear", "piecewise", "drift"])
    def test_features_in_unit_ball_and_deterministic(self, kind):
        a = gen_stream({"kind": kind}, 50, 3, 11)
        b = gen_stream({"kind": kind}, 50, 3, 11)
        assert np.all(np.linalg.norm(a.stream.X, axis=1) <= 1 + 1e-12)
        np.testing.assert_array_equal(a.stream.y, b.stream.y)

    def test_adversarial_delegates(self):
        g = gen_stream({"kind": "adversarial", "params": {"Y": 1.0, "P": 2.0}}, 20, 2, 1)
        np.testing.assert_array_equal(np.einsum("td,td->t", g.stream.X, g.comparator.u), g.stream.y)

    @pytest.mark.parametrize(
        "spec,d",
        [({"kind": "nope"}, 1), ({"kind": "sign_flip"}, 2), ({"kind": "piecewise", "params": {"switch_times": [0]}}, 1), ({}, 1)],
    )
    def test_malformed(self, spec, d):
        with pytest.raises(ParameterError):
            gen_stream(spec, 10, d, 0)


class TestConfig:
    def test_seed_required(self):
        cfg = _config(stream_spec={"kind": "iid_linear"})
        with pytest.raises(ParameterError):
            ExperimentConfig.from_dict(cfg)

    def test_unknown_key(self):
        with pytest.raises(ParameterError):
            ExperimentConfig.from_dict(_config(extra=1))

    def test_seed_override(self):
        cfg = ExperimentConfig.from_dict(_config()).with_seed(99)
        assert cfg.seed == 99

    def test_duplicate_ids(self):
        with pytest.raises(ParameterError):
            ExperimentConfig.from_dict(_config(learners=[{"kind": "flat_grid"}, {"kind": "flat_grid"}]))


class TestRun:
    def test_full_run_and_verify(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config())
        res = run_experiment(cfg, tmp_path)
        assert res.exit_code == 0, (res.reports, res.problems)
        checks = {r["check"] for r in res.reports}
        assert checks == {"general_dvaw", "meta_decomposition", "fixed_share", "interval_decomposition"}
        rows = _rows(tmp_path / "trace.csv")
        assert sum(r["learner_id"] == "gamma=0.9" for r in rows) == 64
        header = (tmp_path / "stream.csv").read_text().splitlines()[1]
        assert header == "t,y,x1,x2"
        again = verify(tmp_path)
        assert again.ok
        assert [r["passed"] for r in again.reports] == [r["passed"] for r in res.reports]

    def test_byte_identical(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config(learners=[{"kind": "flat_grid"}]))
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for name in ("stream.csv", "comparator.csv", "trace.csv", "meta.csv", "reports.json", "learners.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_is_recorded(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config(learners=[{"kind": "single_gamma", "gamma": 1.0}]))
        run_experiment(cfg, tmp_path)
        for name in ("stream.csv", "trace.csv", "comparator.csv"):
            assert (tmp_path / name).read_text().startswith("# format_version: 1, seed: 3")
        for name in ("reports.json", "learners.json"):
            assert json.loads((tmp_path / name).read_text())["seed"] == 3

    def test_tampered_loss_detected(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config(learners=[{"kind": "single_gamma", "gamma": 0.9}]))
        run_experiment(cfg, tmp_path)
        path = tmp_path / "trace.csv"
        lines = path.read_text().splitlines()
        fields = lines[10].split(",")
        fields[4] = repr(float(fields[4]) + 1e-3)
        lines[10] = ",".join(fields)
        path.write_text("\n".join(lines) + "\n")
        res = verify(tmp_path)
        assert not res.ok and res.problems

    def test_empty_trace_is_schema_error(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config(learners=[{"kind": "single_gamma", "gamma": 0.9}]))
        run_experiment(cfg, tmp_path)
        path = tmp_path / "trace.csv"
        path.write_text("\n".join(path.read_text().splitlines()[:2]) + "\n")
        with pytest.raises(SchemaError):
            verify(tmp_path)

    def test_check_off(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config(learners=[{"kind": "single_gamma", "gamma": 0.5}]))
        res = run_experiment(cfg, tmp_path, check=False)
        assert res.exit_code == 0 and res.reports == []

    def test_piecewise_fit_and_self_confident(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            _config(
                hint_mode="self_confident",
                comparator_spec={"kind": "piecewise-fit"},
                learners=[{"kind": "oracle_gamma"}, {"kind": "flat_grid"}],
            )
        )
        res = run_experiment(cfg, tmp_path)
        assert res.exit_code == 0, res.reports

    def test_custom_comparator(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config(learners=[{"kind": "single_gamma", "gamma": 0.9}]))
        simulate(cfg, tmp_path / "src")
        custom = _config(
            learners=[{"kind": "single_gamma", "gamma": 0.9}],
            comparator_spec={"kind": "custom", "path": str(tmp_path / "src" / "comparator.csv")},
        )
        res = run_experiment(ExperimentConfig.from_dict(custom), tmp_path / "run")
        assert res.exit_code == 0
        assert (tmp_path / "run" / "comparator.csv").read_bytes() == (tmp_path / "src" / "comparator.csv").read_bytes()

    def test_failed_check_gives_nonzero_exit(self, tmp_path):
        cfg = ExperimentConfig.from_dict(_config(learners=[{"kind": "single_gamma", "gamma": 0.9}]))
        run_experiment(cfg, tmp_path)
        # replace predictions by garbage while keeping the trace self-consistent
        path = tmp_path / "trace.csv"
        head, *rows = path.read_text().splitlines()[1:]
        cum = reg = 0.0
        comp = {r["t"]: r for r in _rows(tmp_path / "comparator.csv")}
        stream = {r["t"]: r for r in _rows(tmp_path / "stream.csv")}
        out = []
        for line in rows:
            f = line.split(",")
            t, y = f[0], float(f[3])
            pred = 50.0
            loss = 0.5 * (y - pred) ** 2
            u = np.array([float(comp[t]["u1"]), float(comp[t]["u2"])])
            x = np.array([float(stream[t]["x1"]), float(stream[t]["x2"])])
            cum += loss
            reg += loss - 0.5 * (y - x @ u) ** 2
            out.append(",".join([t, f[1], repr(pred), f[3], repr(float(loss)), repr(float(cum)), repr(float(reg))]))
        path.write_text("# format_version: 1, seed: 3\n" + head + "\n" + "\n".join(out) + "\n")
        res = verify(tmp_path)
        assert not res.ok
        assert any(not r["passed"] for r in res.reports)


class TestCli:
    def test_run_and_verify(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(_config(T=32, stream_spec=_piecewise(32), learners=[{"kind": "flat_grid"}])))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "5"]) == 0
        assert json.loads((tmp_path / "o" / "config.json").read_text())["stream_spec"]["seed"] == 5
        assert main(["verify", str(tmp_path / "o")]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_env_default_out(self, tmp_path, monkeypatch):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(_config(T=16, stream_spec=_piecewise(16), learners=[{"kind": "single_gamma", "gamma": 1.0}])))
        monkeypatch.setenv("DVAW_OUT", str(tmp_path / "env"))
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert (tmp_path / "env" / "stream.csv").exists()

    def test_cover(self, capsys):
        assert main(["cover", "--T", "8"]) == 0
        assert len(json.loads(capsys.readouterr().out)["intervals"]) == 15
        assert main(["cover", "--T", "8", "--s", "1", "--tau", "6"]) == 0
        parts = json.loads(capsys.readouterr().out)["partition"]
        assert [(p["start"], p["end"]) for p in parts] == [(1, 1), (2, 3), (4, 5), (6, 6)]

    def test_bad_config_exit_code(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(_config(b=1.0)))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_shipped_configs_parse(self):
        for path in CONFIGS.glob("*.json"):
            ExperimentConfig.from_dict(json.loads(path.read_text()))
