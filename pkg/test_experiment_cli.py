#!/usr/bin/env python3
"""
Test the experiment driver, report writers and command line

Verifies that:
- Experiments write their tables and a schema-valid summary.json
- Reruns with the same seed are bit-identical
- The CLI maps results and failures to exit codes and error envelopes
- Config files and flags combine into one experiment spec
"""

import json
import sys
from pathlib import Path

import pytest

# Add lorentz_slab to path
sys.path.insert(0, str(Path(__file__).parent))

from lorentz_slab.cli import UsageError, build_parser, build_spec, main
from lorentz_slab.config import SlabConfig
from lorentz_slab.experiments import ExperimentError, ExperimentSpec, run
from lorentz_slab.reports import (
    GK_COLUMNS,
    PROFILE_COLUMNS,
    create_error_report,
    load_json,
    read_table,
    validate_report,
    write_table,
)


def _header(path: Path) -> str:
    return path.read_text(encoding="utf-8").splitlines()[0]


def test_unknown_experiment_rejected(tmp_path):
    with pytest.raises(ExperimentError):
        ExperimentSpec("nope", out_dir=tmp_path)
    with pytest.raises(ExperimentError):
        ExperimentSpec("gk", out_dir=tmp_path, samples=0)


def test_gk_run_writes_valid_summary(tmp_path):
    summary = run(ExperimentSpec("gk", config=SlabConfig(epsilon=1e-4), out_dir=tmp_path))
    assert summary.passed
    assert _header(tmp_path / "gk.csv") == ",".join(GK_COLUMNS)

    table = read_table(tmp_path / "gk.csv")
    row = table[table["mu"] == 1.0].iloc[0]
    assert row["D"] == pytest.approx(0.1875, abs=1e-8)

    body = load_json(tmp_path / "summary.json")
    ok, errors = validate_report(body)
    assert ok, errors
    assert body["experiment"] == "gk"
    assert "gk.csv" in body["files"] and "summary.json" in body["files"]


def test_main_gk_exit_status(tmp_path, capsys):
    out = tmp_path / "gk"
    assert main(["gk", "--out", str(out), "--seed", "5"]) == 0
    assert "gk: PASSED" in capsys.readouterr().out
    assert load_json(out / "summary.json")["seed"] == 5


def test_bad_config_gives_error_envelope(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("L = wide\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["gk", "--config", str(cfg), "--out", str(out)]) == 1

    body = load_json(out / "error.json")
    assert body["state"] == "error"
    assert body["error"]["error_type"] == "config_error"
    assert body["meta"] == {"continue": False, "stop_reason": "error"}
    assert '"config_error"' in capsys.readouterr().err


def test_invalid_physical_parameter_is_config_error(tmp_path):
    cfg = tmp_path / "slab.cfg"
    cfg.write_text("eta = 0.5\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(["gk", "--config", str(cfg), "--out", str(out)]) == 1
    assert load_json(out / "error.json")["error"]["error_type"] == "config_error"


def test_profile_kinetic_is_reproducible(tmp_path):
    config = SlabConfig(epsilon=1e-4, eta=2.0, seed=99)
    for name in ("a", "b"):
        run(ExperimentSpec("profile-kinetic", config=config, out_dir=tmp_path / name, samples=8, bins=2, angles=16, workers=1))

    first = (tmp_path / "a" / "profile.csv").read_bytes()
    assert first == (tmp_path / "b" / "profile.csv").read_bytes()
    assert _header(tmp_path / "a" / "profile.csv") == ",".join(PROFILE_COLUMNS)
    assert len(read_table(tmp_path / "a" / "profile.csv")) == 2


def test_hilbert_remainder_passes(tmp_path):
    summary = run(ExperimentSpec("hilbert-remainder", config=SlabConfig(epsilon=1e-4), out_dir=tmp_path))
    assert summary.passed, summary.checks
    rows = summary.results["rows"]
    assert [r["eta"] for r in rows] == [10.0, 40.0, 160.0]
    assert (tmp_path / "remainder.csv").exists()


def test_build_spec_merges_file_and_flags(tmp_path):
    cfg = tmp_path / "slab.cfg"
    cfg.write_text("eta = 3\nmu = 0.5\nseed = 4\nsamples = 40\nbins = 4\n", encoding="utf-8")
    args = build_parser().parse_args(["fick", "--config", str(cfg), "--bins", "6", "--seed", "8"])
    spec = build_spec(args)
    assert spec.config.eta == 3.0 and spec.config.mu == 0.5
    assert spec.config.seed == 8
    assert spec.samples == 40 and spec.bins == 6
    assert spec.sampling()["samples"] == 40


def test_sweep_lists_parse():
    parser = build_parser()
    args = parser.parse_args(["pathologies", "--sweep-epsilon", "1e-2,3e-3", "--sweep-eta", "5,10"])
    assert args.sweep_epsilon == [1e-2, 3e-3]
    assert args.sweep_eta == [5.0, 10.0]
    with pytest.raises(UsageError):
        parser.parse_args(["pathologies", "--sweep-epsilon", "a,b"])
    with pytest.raises(UsageError):
        parser.parse_args(["teleport"])


def test_unknown_subcommand_gives_usage_envelope(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["teleport", "--out", str(out)]) == 2

    body = load_json(out / "error.json")
    assert body["state"] == "error"
    assert body["error"]["error_type"] == "usage_error"
    assert "teleport" in body["error"]["error_message"]
    err = capsys.readouterr().err
    assert "usage:" in err
    assert '"usage_error"' in err


def test_bad_flag_value_gives_usage_envelope(tmp_path):
    out = tmp_path / "out"
    assert main(["pathologies", "--out", str(out), "--sweep-eta", "5,x"]) == 2
    assert load_json(out / "error.json")["error"]["error_type"] == "usage_error"


def test_write_table_requires_columns(tmp_path):
    with pytest.raises(KeyError):
        write_table(tmp_path / "gk.csv", [{"mu": 1.0}], GK_COLUMNS)


def test_error_report_shape():
    body = create_error_report("boom", "ExperimentError")
    assert body == {
        "state": "error",
        "error": {"error_type": "ExperimentError", "error_message": "boom"},
        "meta": {"continue": False, "stop_reason": "error"},
    }
    assert json.loads(json.dumps(body)) == body


def test_schema_rejects_incomplete_summary():
    ok, errors = validate_report({"experiment": "gk"})
    assert not ok
    assert any(msg.startswith("ERROR at <root>") for msg in errors)


COARSE = SlabConfig(epsilon=0.05, mu=1.0, eta=1.0, seed=3)


def test_closeness_writes_both_grids(tmp_path):
    summary = run(ExperimentSpec("closeness", config=COARSE, out_dir=tmp_path, samples=4, workers=1))
    table = read_table(tmp_path / "closeness.csv")
    assert len(table) == 80
    assert set(table["kind"]) == {"time_dependent", "stationary"}
    assert set(summary.checks) == {"time_dependent", "stationary"}
    assert "fraction_over_3" in summary.results["stationary"]
    ok, errors = validate_report(load_json(tmp_path / "summary.json"))
    assert ok, errors


def test_equivalence_is_worker_invariant(tmp_path):
    summary = run(ExperimentSpec("equivalence", config=COARSE, out_dir=tmp_path, samples=4, workers=1))
    assert summary.checks["worker_count_invariant"]
    table = read_table(tmp_path / "equivalence.csv")
    assert set(table["kind"]) == {"h_out_representation", "stationary_mode"}
    assert len(table) == 80


@pytest.mark.parametrize(
    "name, options, table",
    [
        ("fick", {"samples": 8, "bins": 2, "angles": 16}, "fick.csv"),
        ("profile-micro", {"samples": 2, "bins": 2, "angles": 16}, "profile.csv"),
        ("survival", {"samples": 64}, "survival.csv"),
        ("diffusive-limit", {"samples": 64, "sweep_eta": [1.0, 2.0]}, "diffusive_limit.csv"),
        ("pathologies", {"samples": 8, "sweep_epsilon": [0.05, 0.03, 0.02]}, "pathologies.json"),
    ],
)
def test_small_runs_write_reports(tmp_path, name, options, table):
    summary = run(ExperimentSpec(name, config=COARSE, out_dir=tmp_path, workers=1, **options))
    assert (tmp_path / table).exists()
    assert summary.files[-1] == "summary.json"
    ok, errors = validate_report(load_json(tmp_path / "summary.json"))
    assert ok, errors


def test_survival_reports_raw_and_extrapolated_scores(tmp_path):
    run(ExperimentSpec("survival", config=COARSE, out_dir=tmp_path, samples=64, workers=1))
    results = load_json(tmp_path / "summary.json")["results"]
    assert results["center_fine_eta"] == 2.0 * COARSE.eta
    assert results["center_raw_z"] == results["center"]["z_score"]
    extrapolated = 2.0 * results["center_fine_survival"] - results["center"]["survival"]
    assert results["center_extrapolated"] == pytest.approx(extrapolated, abs=1e-12)
    assert results["center_extrapolated_stderr"] > 0
