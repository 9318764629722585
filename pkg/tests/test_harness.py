"""Experiment orchestration: determinism, shared designs, persistence,
resume, convergence emission and the CLI surface."""

import json
import subprocess
import sys

import numpy as np
import pytest

import eshotgun.harness as harness
from eshotgun.harness import (
    ExperimentConfig,
    comparison_tables,
    emit_convergence,
    final_gaps,
    load_records,
    records_path,
    run_experiment,
    run_single,
)


def tiny_config(**overrides):
    base = dict(
        problem="wangfreitas",
        method="es-0",
        batch_size=2,
        budget=6,
        repeats=2,
        base_seed=0,
        inner_budget=300,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfigValidation:
    def test_unknown_method(self):
        with pytest.raises(ValueError):
            tiny_config(method="qei")

    def test_unknown_problem(self):
        with pytest.raises(KeyError):
            tiny_config(problem="nosuch")

    def test_budget_must_cover_design(self):
        with pytest.raises(ValueError):
            tiny_config(budget=1)

    def test_epsilon_range(self):
        with pytest.raises(ValueError):
            tiny_config(epsilon=1.5)


class TestRunSingle:
    def test_init_only_budget(self):
        record = run_single(tiny_config(budget=2), 0)
        assert len(record.iterations) == 0
        assert record.best_seen.size == 2
        assert record.final_best == record.initial_values.min()

    def test_deterministic_record(self):
        a = run_single(tiny_config(), 1).to_json_dict()
        b = run_single(tiny_config(), 1).to_json_dict()
        assert a == b

    def test_trace_matches_budget_and_decreases(self):
        record = run_single(tiny_config(budget=7), 0)  # final batch truncated
        assert record.best_seen.size == 7
        assert np.all(np.diff(record.best_seen) <= 0.0)
        evaluated = [record.initial_values] + [it.values for it in record.iterations]
        assert sum(v.size for v in evaluated) == 7

    def test_designs_shared_across_methods(self):
        records = {
            method: run_single(tiny_config(method=method), 3)
            for method in ("es-0", "ts", "lp")
        }
        designs = [r.initial_inputs.tolist() for r in records.values()]
        assert designs[0] == designs[1] == designs[2]

    def test_shotgun_records_anchor_and_radius(self):
        record = run_single(tiny_config(method="es-rs"), 0)
        it = record.iterations[0]
        assert it.anchor is not None and it.radius is not None
        assert it.radius >= 0.0
        ts = run_single(tiny_config(method="ts", ts_candidates=50), 0)
        assert ts.iterations[0].anchor is None

    def test_in_bounds_evaluations(self):
        record = run_single(tiny_config(method="es-rs", budget=8), 0)
        for it in record.iterations:
            assert np.all(it.batch >= 0.0) and np.all(it.batch <= 1.0)


class TestRunExperiment:
    def test_parallel_matches_serial(self, tmp_path):
        config = tiny_config(repeats=3)
        serial = run_experiment(config, parallelism=1)
        parallel = run_experiment(config, parallelism=2)
        assert [r.to_json_dict() for r in serial] == [
            r.to_json_dict() for r in parallel
        ]

    def test_resume_skips_completed(self, tmp_path, monkeypatch, caplog):
        config = tiny_config(repeats=3)
        run_experiment(config, out_dir=tmp_path)
        first = load_records(records_path(tmp_path, config))
        assert len(first) == 3

        calls = []
        original = harness._run_single_task

        def counting(config_dict, idx):
            calls.append(idx)
            return original(config_dict, idx)

        monkeypatch.setattr(harness, "_run_single_task", counting)
        more = run_experiment(tiny_config(repeats=5), out_dir=tmp_path)
        assert sorted(calls) == [3, 4]  # only the new repeats ran
        assert [r.repeat_index for r in more] == [0, 1, 2, 3, 4]
        lines = load_records(records_path(tmp_path, config))
        assert sorted(r.repeat_index for r in lines) == [0, 1, 2, 3, 4]

    def test_mixed_configuration_refused(self, tmp_path):
        run_experiment(tiny_config(repeats=1), out_dir=tmp_path)
        with pytest.raises(ValueError):
            run_experiment(tiny_config(repeats=1, base_seed=9), out_dir=tmp_path)

    def test_failed_repeat_recorded(self, tmp_path, monkeypatch):
        def boom(config, repeat_index):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(harness, "run_single", boom)
        records = run_experiment(tiny_config(repeats=2), out_dir=tmp_path)
        assert all(r.failed for r in records)
        assert "synthetic failure" in records[0].error

    def test_env_var_overrides_parallelism(self, monkeypatch):
        monkeypatch.setenv("ESHOTGUN_THREADS", "3")
        assert harness.effective_parallelism(1) == 3


class TestConvergence:
    def test_single_record_is_its_own_trace(self):
        record = run_single(tiny_config(budget=6), 0)
        rows = emit_convergence([record])
        fmin = -4.000000000000026
        assert rows.shape == (6, 4)
        assert np.allclose(rows[:, 1], record.best_seen - fmin)
        assert np.allclose(rows[:, 2], rows[:, 3])  # zero-width IQR

    def test_median_non_increasing(self):
        records = [run_single(tiny_config(budget=8), i) for i in range(3)]
        rows = emit_convergence(records)
        assert np.all(np.diff(rows[:, 1]) <= 1e-12)

    def test_matches_recomputation_oracle(self):
        records = [run_single(tiny_config(budget=6), i) for i in range(3)]
        rows = emit_convergence(records)
        fmin = -4.000000000000026
        gaps = np.vstack([r.best_seen for r in records]) - fmin
        for t in range(6):
            assert rows[t, 1] == pytest.approx(np.median(gaps[:, t]))
            assert rows[t, 2] == pytest.approx(np.quantile(gaps[:, t], 0.25))
            assert rows[t, 3] == pytest.approx(np.quantile(gaps[:, t], 0.75))

    def test_rejects_mixed_configs(self):
        a = run_single(tiny_config(), 0)
        b = run_single(tiny_config(method="ts", ts_candidates=50), 0)
        with pytest.raises(ValueError):
            emit_convergence([a, b])


class TestComparisonTables:
    def test_two_methods_one_best(self, tmp_path):
        for method in ("es-0", "ts"):
            run_experiment(
                tiny_config(method=method, repeats=3, ts_candidates=50),
                out_dir=tmp_path,
            )
        records = []
        for method in ("es-0", "ts"):
            records.extend(
                load_records(records_path(tmp_path, tiny_config(method=method)))
            )
        tables = comparison_tables(records)
        assert set(tables) == {"wangfreitas"}
        assert sum(r.best for r in tables["wangfreitas"].rows) == 1

    def test_final_gaps_non_negative(self):
        records = [run_single(tiny_config(), i) for i in range(2)]
        gaps = final_gaps(records)
        assert gaps.shape == (2,)
        assert np.all(gaps >= 0.0)


class TestCli:
    def run_cli(self, *args):
        return subprocess.run(
            [sys.executable, "-m", "eshotgun.cli", *args],
            capture_output=True,
            text=True,
        )

    def test_run_stats_conv_round_trip(self, tmp_path):
        out = tmp_path / "runs"
        for method in ("es-0", "es-rs"):
            result = self.run_cli(
                "run", "--problem", "wangfreitas", "--method", method,
                "--batch-size", "2", "--budget", "6", "--repeats", "2",
                "--seed", "0", "--inner-budget", "300", "--out", str(out),
            )
            assert result.returncode == 0, result.stderr
        stats = self.run_cli("stats", "--in", str(out), "--format", "json")
        assert stats.returncode == 0, stats.stderr
        doc = json.loads(stats.stdout)
        assert "wangfreitas" in doc
        assert sum(m["best"] for m in doc["wangfreitas"]["methods"]) == 1

        solo = tmp_path / "solo"
        result = self.run_cli(
            "run", "--problem", "wangfreitas", "--method", "es-0",
            "--batch-size", "2", "--budget", "6", "--repeats", "2",
            "--seed", "0", "--inner-budget", "300", "--out", str(solo),
        )
        assert result.returncode == 0
        csv_path = tmp_path / "conv.csv"
        conv = self.run_cli("conv", "--in", str(solo), "--out", str(csv_path))
        assert conv.returncode == 0, conv.stderr
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "t,median,q25,q75"
        assert len(lines) == 7

    def test_config_error_exit_code(self, tmp_path):
        result = self.run_cli(
            "run", "--problem", "wangfreitas", "--method", "nosuch",
            "--out", str(tmp_path),
        )
        assert result.returncode == 1
        result = self.run_cli(
            "run", "--problem", "wangfreitas", "--method", "es-0",
            "--budget", "1", "--out", str(tmp_path),
        )
        assert result.returncode == 1

    def test_stats_missing_directory(self, tmp_path):
        result = self.run_cli("stats", "--in", str(tmp_path / "missing"))
        assert result.returncode == 1
