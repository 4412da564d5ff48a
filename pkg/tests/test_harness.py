"""Config parsing, trace serialization, rate fits, runner, and CLI."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from csgd_lab.analysis import fit_rate
from csgd_lab.cli import main
from csgd_lab.compression import CompressionSpec
from csgd_lab.config import load_config, with_sweep
from csgd_lab.errors import ConfigError, InvalidSpecError
from csgd_lab.linesearch import ArmijoConfig
from csgd_lab.objectives import make_interpolated_regression
from csgd_lab.optimizers import run_csgd_asss
from csgd_lab.runner import run_experiment
from csgd_lab.traceio import aggregate_csv_text, read_trace_csv, trace_csv_text, write_trace

GOLDEN_HEADER = "t,i_t,f_full,f_i,grad_sq,alpha,eta,mem_sq,dist_sq,backtracks,evals"
GOLDEN_HEADER_DIST = GOLDEN_HEADER + ",bytes_up,bytes_down,worker_alpha_min,worker_alpha_max"


def minimal_config(tmp_path: Path, **overrides) -> Path:
    values = {
        "algorithm": "scaled_gd",
        "horizon": "40",
        "seeds": "0,1",
        "output_dir": str(tmp_path / "out"),
        "x0": "ones",
    }
    values.update(overrides)
    experiment = "\n".join(f"{k} = {v}" for k, v in values.items())
    text = f"""
[experiment]
{experiment}

[objective]
kind = diag_quadratic
pow2_count = 4

[armijo]
sigma = 0.2
rho = 0.8
scale_a = 0.3
alpha_max_init = 10
"""
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return path


class TestConfig:
    def test_minimal_parses(self, tmp_path):
        config = load_config(minimal_config(tmp_path))
        assert config.algorithm == "scaled_gd"
        assert config.seeds == (0, 1)
        assert config.objective.pow2_count == 4

    def test_seed_range_syntax(self, tmp_path):
        config = load_config(minimal_config(tmp_path, seeds="3..6"))
        assert config.seeds == (3, 4, 5, 6)

    def test_unknown_key_rejected(self, tmp_path):
        path = minimal_config(tmp_path)
        path.write_text(path.read_text() + "\nwhatever = 3\n")
        with pytest.raises(ConfigError, match="unknown keys"):
            load_config(path)

    def test_unused_section_rejected(self, tmp_path):
        path = minimal_config(tmp_path)
        path.write_text(path.read_text() + "\n[compression]\nk = 2\n")
        with pytest.raises(ConfigError, match="not used"):
            load_config(path)

    def test_missing_section_rejected(self, tmp_path):
        path = minimal_config(tmp_path, algorithm="csgd_asss")
        with pytest.raises(ConfigError, match="needs sections"):
            load_config(path)

    def test_bad_value_names_key(self, tmp_path):
        path = minimal_config(tmp_path, horizon="soon")
        with pytest.raises(ConfigError, match="experiment.horizon"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.cfg")

    def test_override_revalidates(self, tmp_path):
        config = load_config(minimal_config(tmp_path))
        bumped = config.with_override("armijo.sigma", "0.5")
        assert bumped.armijo.sigma == 0.5
        with pytest.raises(ConfigError):
            config.with_override("armijo.sigma", "2.0")
        with pytest.raises(ConfigError):
            config.with_override("armijo.nope", "1")

    def test_preset_files_parse(self):
        root = Path(__file__).resolve().parents[1] / "presets"
        for preset in ("fig6b.cfg", "gd_scale.cfg"):
            config = load_config(root / preset)
            assert config.sweep_param == "armijo.scale_a"


class TestTraceIo:
    def trace(self):
        obj = make_interpolated_regression(10, 6, 1.0, seed=1)
        return run_csgd_asss(obj, ArmijoConfig(), CompressionSpec(2, 6), 25, seed=2)

    def test_header_is_first_line(self):
        text = trace_csv_text(self.trace())
        assert text.split("\n", 1)[0] == GOLDEN_HEADER

    def test_serialization_round_trips_floats(self, tmp_path):
        trace = self.trace()
        write_trace(trace, tmp_path / "t.csv")
        back = read_trace_csv(tmp_path / "t.csv")
        for name in trace.columns:
            assert np.array_equal(back[name], trace.column(name), equal_nan=True), name

    def test_meta_sidecar(self, tmp_path):
        trace = self.trace()
        write_trace(trace, tmp_path / "t.csv")
        meta = (tmp_path / "t.meta.json").read_text()
        assert '"status": "COMPLETED"' in meta
        assert '"seed": 2' in meta

    def test_identical_runs_identical_bytes(self):
        a, b = self.trace(), self.trace()
        assert trace_csv_text(a) == trace_csv_text(b)

    def test_aggregate_is_columnwise_mean(self):
        traces = [self.trace() for _ in range(3)]
        text = aggregate_csv_text(traces)
        lines = text.strip().split("\n")
        assert lines[0] == GOLDEN_HEADER
        first = dict(zip(lines[0].split(","), map(float, lines[1].split(","))))
        expected = np.mean([t.column("f_full")[0] for t in traces])
        assert abs(first["f_full"] - expected) <= 1e-12 * abs(expected)

    def test_aggregate_handles_uneven_lengths(self):
        obj = make_interpolated_regression(10, 6, 1.0, seed=1)
        short = run_csgd_asss(obj, ArmijoConfig(), CompressionSpec(2, 6), 10, seed=3)
        text = aggregate_csv_text([self.trace(), short])
        assert len(text.strip().split("\n")) == 1 + 25


class TestFitRate:
    def test_exact_power_law(self):
        t = np.arange(0, 400)
        y = np.zeros(400)
        y[1:] = 1.0 / t[1:]
        fit = fit_rate(y, "power_law", window=(1, 399))
        assert fit.rate == pytest.approx(-1.0, abs=1e-6)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_exact_geometric(self):
        y = 0.9 ** np.arange(300)
        fit = fit_rate(y, "geometric", window=(0, 299))
        assert fit.rate == pytest.approx(math.log(0.9), abs=1e-9)

    def test_requires_ten_points(self):
        with pytest.raises(InvalidSpecError):
            fit_rate(np.ones(5), "geometric", window=(0, 4))

    def test_ignores_nonpositive_values(self):
        y = 0.5 ** np.arange(50)
        y[10] = 0.0
        fit = fit_rate(y, "geometric", window=(0, 49))
        assert fit.points == 49
        assert fit.rate == pytest.approx(math.log(0.5), abs=1e-9)

    def test_bad_model(self):
        with pytest.raises(InvalidSpecError):
            fit_rate(np.ones(20), "linear", window=(0, 19))


class TestRunner:
    def test_writes_per_seed_and_aggregate(self, tmp_path):
        config = load_config(minimal_config(tmp_path))
        variants = run_experiment(config)
        assert len(variants) == 1
        outcome = variants[0]
        assert len(outcome.outcomes) == 2
        for seed_outcome in outcome.outcomes:
            assert seed_outcome.csv_path.is_file()
            assert seed_outcome.status == "COMPLETED"
        assert outcome.aggregate_path.is_file()

    def test_sweep_creates_variant_dirs(self, tmp_path):
        config = load_config(minimal_config(tmp_path))
        config = with_sweep(config, "armijo.scale_a", "0.15, 0.3")
        variants = run_experiment(config)
        assert [v.label for v in variants] == ["armijo.scale_a=0.15", "armijo.scale_a=0.3"]
        for variant in variants:
            assert variant.aggregate_path.parent.name == variant.label

    def test_reproducible_bytes(self, tmp_path):
        config = load_config(minimal_config(tmp_path))
        first = run_experiment(config)[0]
        blobs = [p.csv_path.read_bytes() for p in first.outcomes]
        second = run_experiment(config)[0]
        for outcome, blob in zip(second.outcomes, blobs):
            assert outcome.csv_path.read_bytes() == blob


class TestCli:
    def test_run_exit_zero(self, tmp_path, capsys):
        code = main(["run", str(minimal_config(tmp_path))])
        out = capsys.readouterr().out
        assert code == 0
        assert "seed    0" in out and "COMPLETED" in out

    def test_run_bad_config_exit_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[experiment]\nalgorithm = teleport\n")
        assert main(["run", str(bad)]) == 1

    def test_sweep_prints_ratio(self, tmp_path, capsys):
        code = main([
            "sweep", str(minimal_config(tmp_path)),
            "--param", "armijo.scale_a", "--values", "0.15,0.3",
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "final-loss ratio" in out

    def test_run_halt_exit_two(self, tmp_path, capsys):
        path = minimal_config(tmp_path, horizon="10")
        text = path.read_text().replace("alpha_max_init = 10", "alpha_max_init = 1e9")
        text = text.replace("[armijo]", "[armijo]\nmax_backtracks = 2")
        path.write_text(text)
        assert main(["run", str(path)]) == 2

    def test_theory_prints_zeta_row(self, capsys):
        code = main(["theory", "--sigma", "0.1", "--gamma", "0.5"])
        out = capsys.readouterr().out
        assert code == 0
        machine = [line for line in out.splitlines() if line.startswith("zeta=")]
        assert machine and float(machine[0].split("=")[1]) == pytest.approx(1 / 30)

    def test_theory_gamma_one_zeta_is_sigma(self, capsys):
        main(["theory", "--sigma", "0.37", "--gamma", "1.0"])
        out = capsys.readouterr().out
        machine = [line for line in out.splitlines() if line.startswith("zeta=")]
        assert float(machine[0].split("=")[1]) == 0.37

    def test_theory_check_exit_zero(self, capsys):
        assert main(["theory", "--sigma", "0.1", "--gamma", "0.5", "--check"]) == 0

    def test_theory_bad_range_exit_one(self, capsys):
        assert main(["theory", "--sigma", "1.5", "--gamma", "0.5"]) == 1

    def test_verify_quick_passes(self, capsys):
        assert main(["verify", "--quick"]) == 0
        out = capsys.readouterr().out
        assert "all" in out and "passed" in out

    def test_verify_fault_injection_fails(self, capsys):
        assert main(["verify", "--quick", "--inject-fault", "disable_scaling"]) == 3
        out = capsys.readouterr().out
        assert "FAIL" in out and "scaling-necessity" in out


class TestPresets:
    PRESETS = Path(__file__).resolve().parents[1] / "presets"

    def test_fig6b_flags_diverged_and_converged(self, tmp_path):
        # Trimmed to two seeds; the acceptance suite covers the full sweep.
        from dataclasses import replace

        config = load_config(self.PRESETS / "fig6b.cfg")
        config = config.with_override("experiment.seeds", "0,1")
        config = with_sweep(config, "armijo.scale_a", "1.0, 0.3")
        config = replace(config, output_dir=tmp_path)
        unscaled, scaled = run_experiment(config)
        assert {o.status for o in unscaled.outcomes} == {"DIVERGED"}
        assert {o.status for o in scaled.outcomes} == {"CONVERGED"}
        for outcome in scaled.outcomes:
            assert outcome.final_loss < 1e-4 * outcome.initial_loss * (1 + 1e-9)

    def test_gd_scale_reports_ratio(self, tmp_path, capsys):
        preset = tmp_path / "gd_scale.cfg"
        text = (self.PRESETS / "gd_scale.cfg").read_text()
        preset.write_text(text.replace("out/gd_scale", str(tmp_path / "out")))
        code = main(["run", str(preset)])
        out = capsys.readouterr().out
        assert code == 0
        ratio_lines = [l for l in out.splitlines() if l.startswith("final-loss ratio")]
        assert len(ratio_lines) == 1
        ratio = float(ratio_lines[0].rsplit("=", 1)[1])
        assert ratio <= 1e-3


class TestThreading:
    def test_thread_cap_preserves_bytes(self, tmp_path, monkeypatch):
        config = load_config(minimal_config(tmp_path, seeds="0..3"))
        serial = run_experiment(config)[0]
        blobs = {o.seed: o.csv_path.read_bytes() for o in serial.outcomes}
        monkeypatch.setenv("CSGD_LAB_THREADS", "4")
        threaded = run_experiment(config)[0]
        for outcome in threaded.outcomes:
            assert outcome.csv_path.read_bytes() == blobs[outcome.seed]
