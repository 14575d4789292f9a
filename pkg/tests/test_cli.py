import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from rare_eval.cli import main, run_subcommand
from rare_eval.config import DEFAULTS, load_config, merge_config
from rare_eval.outputs import format_float, write_csv, write_jsonl

SMALL_EXPERIMENT = {
    "master_seed": 11,
    "env": {"kind": "analytic_bernoulli", "M": 16},
    "trace": {"T_train": 3000, "noise_levels": [0.0, 0.2], "keep_last_fraction": 1.0},
    "avf": {"kind": "tabular", "u_bins": 5, "holdout_fraction": 0.2},
    "run": {
        "theta": [0.6, 0.0],
        "adversary": "avf",
        "n": 64,
        "budget": 50000,
        "searches": 5,
        "estimator": "avf",
        "T": 500,
        "alpha": 0.5,
        "rho": [3.0],
        "budgets": [200, 1000],
        "trials": 40,
        "agents_u": [0.3, 0.5, 0.8, 1.0],
        "select_estimators": ["vmc", "avf"],
    },
}


def write_config(tmp_path, out_dir, extra=None):
    config = yaml.safe_load(yaml.safe_dump(SMALL_EXPERIMENT))
    config["out_dir"] = str(out_dir)
    for key, value in (extra or {}).items():
        config[key] = value
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(config))
    return path


def run_pipeline(config_path, workers=1):
    config = load_config(str(config_path))
    produced = []
    for name in ("trace", "train-avf", "search", "estimate", "curve", "select"):
        manifest = run_subcommand(name, config, workers=workers)
        produced.extend(manifest.outputs)
    return produced


class TestPipeline:
    def test_end_to_end(self, tmp_path):
        import time

        config_path = write_config(tmp_path, tmp_path / "run")
        start = time.perf_counter()
        outputs = run_pipeline(config_path)
        assert time.perf_counter() - start < 300.0  # single core, desk scale
        names = {p.rsplit("/", 1)[-1] for p in outputs}
        assert names == {
            "trace.jsonl", "model.json", "avf_eval.json",
            "search.jsonl", "estimate.jsonl", "curve.csv", "selection.csv",
        }
        search_rows = [
            json.loads(line)
            for line in (tmp_path / "run" / "search.jsonl").read_text().splitlines()
        ]
        assert len(search_rows) == 5
        assert all(set(r) == {"adversary", "seed", "found", "episodes_used", "fallback_used"}
                   for r in search_rows)
        assert all(r["found"] for r in search_rows)
        est = json.loads((tmp_path / "run" / "estimate.jsonl").read_text())
        assert {"estimator", "p_hat", "episodes", "rejected_proposals", "z_alpha", "seed",
                "branch"} <= set(est)
        assert est["episodes"] == 500

    def test_estimate_vmc_and_combined(self, tmp_path):
        config_path = write_config(tmp_path, tmp_path / "run")
        config = load_config(str(config_path))
        run_subcommand("trace", config)
        run_subcommand("train-avf", config)
        for estimator in ("vmc", "combined"):
            config["run"]["estimator"] = estimator
            run_subcommand("estimate", config)
            rec = json.loads((tmp_path / "run" / "estimate.jsonl").read_text())
            assert rec["estimator"] == estimator

    def test_curve_csv_shape(self, tmp_path):
        config_path = write_config(tmp_path, tmp_path / "run")
        config = load_config(str(config_path))
        config["run"]["estimator"] = "vmc"
        run_subcommand("curve", config)
        lines = (tmp_path / "run" / "curve.csv").read_text().strip().splitlines()
        assert lines[0] == "budget,miss_fraction,stderr,rho,estimator,trials"
        assert len(lines) == 1 + 2  # one rho, two budgets

    def test_missing_trace_is_an_error(self, tmp_path):
        config_path = write_config(tmp_path, tmp_path / "nowhere")
        config = load_config(str(config_path))
        with pytest.raises(OSError):
            run_subcommand("train-avf", config)

    def test_unknown_subcommand(self, tmp_path):
        with pytest.raises(ValueError):
            run_subcommand("mystery", merge_config({}))


class TestDeterminism:
    def test_rerun_is_byte_identical(self, tmp_path):
        outs = []
        for label in ("a", "b"):
            config_path = write_config(tmp_path, tmp_path / label)
            run_pipeline(config_path)
            outs.append(tmp_path / label)
        for name in ("trace.jsonl", "model.json", "search.jsonl", "estimate.jsonl",
                     "curve.csv", "selection.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name

    def test_worker_count_does_not_change_outputs(self, tmp_path):
        config_path = write_config(tmp_path, tmp_path / "w1")
        config = load_config(str(config_path))
        run_subcommand("trace", config)
        run_subcommand("train-avf", config)
        run_subcommand("curve", config, workers=1)
        run_subcommand("select", config, workers=1)
        one_curve = (tmp_path / "w1" / "curve.csv").read_bytes()
        one_select = (tmp_path / "w1" / "selection.csv").read_bytes()
        run_subcommand("curve", config, workers=2)
        run_subcommand("select", config, workers=2)
        assert (tmp_path / "w1" / "curve.csv").read_bytes() == one_curve
        assert (tmp_path / "w1" / "selection.csv").read_bytes() == one_select


class TestConfig:
    def test_defaults_complete(self):
        config = merge_config({})
        assert config == DEFAULTS

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            merge_config({"env": {"planet": "mars"}})
        with pytest.raises(ValueError, match="unknown config key"):
            merge_config({"turbo": True})

    def test_type_checks(self):
        with pytest.raises(ValueError):
            merge_config({"master_seed": "abc"})
        with pytest.raises(ValueError):
            merge_config({"run": {"m": 1.5}})
        assert merge_config({"run": {"m": 500}})["run"]["m"] == 500

    def test_cli_overrides(self, tmp_path):
        config_path = write_config(tmp_path, tmp_path / "run")
        rc = main([
            "trace", "--config", str(config_path), "--seed", "123",
            "--out", str(tmp_path / "override"),
        ])
        assert rc == 0
        assert (tmp_path / "override" / "trace.jsonl").exists()
        manifest = json.loads((tmp_path / "override" / "manifest-trace.json").read_text())
        assert manifest["master_seed"] == 123

    def test_cli_error_exit_code(self, tmp_path):
        config_path = write_config(tmp_path, tmp_path / "run")
        # estimate before train-avf: the model file is missing
        rc = main(["estimate", "--config", str(config_path), "--estimator", "avf"])
        assert rc == 2

    def test_console_entry_point(self, tmp_path):
        config_path = write_config(tmp_path, tmp_path / "cli")
        proc = subprocess.run(
            [sys.executable, "-m", "rare_eval.cli", "trace", "--config", str(config_path)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "trace.jsonl" in proc.stdout


class TestEmitters:
    def test_empty_jsonl_and_csv(self, tmp_path):
        write_jsonl(tmp_path / "empty.jsonl", [])
        assert (tmp_path / "empty.jsonl").read_text() == ""
        write_csv(tmp_path / "empty.csv", ["a", "b"], [])
        assert (tmp_path / "empty.csv").read_text() == "a,b\n"

    def test_csv_round_trip_exact(self, tmp_path):
        values = [1.0 / 3.0, 2.5e-8, 1e-300, 0.1 + 0.2, float(np.float64(7) / 11)]
        write_csv(tmp_path / "vals.csv", ["v"], [(v,) for v in values])
        lines = (tmp_path / "vals.csv").read_text().strip().splitlines()[1:]
        parsed = [float(line) for line in lines]
        assert parsed == values  # bitwise identical after round trip

    def test_jsonl_round_trip_exact(self, tmp_path):
        record = {"name": "x", "value": 1.0 / 7.0, "count": 3, "flag": True, "none": None}
        write_jsonl(tmp_path / "r.jsonl", [record])
        parsed = json.loads((tmp_path / "r.jsonl").read_text())
        assert parsed == record

    def test_format_float_17_digits(self):
        assert float(format_float(1.0 / 3.0)) == 1.0 / 3.0
        assert format_float(0.5) == "0.5"
