"""Tests for the command line: exit codes and written files."""
import json

import pytest

import config
import main
import scenarios
import scheme
from grid import read_csv
from report import dump_path


@pytest.fixture(autouse=True)
def temp_output_dir(monkeypatch, tmp_path):
    monkeypatch.setattr("main.config.REACH_OUTPUT_DIR", str(tmp_path))
    monkeypatch.setattr("main.config.INCLUSION_REACH_THREADS", "")
    yield tmp_path


def test_validate_rejects_large_step(capsys):
    assert main.main(["validate", "--scenario", "linear2d", "--h", "0.3"]) == main.EXIT_INVALID


def test_validate_echoes_derived_parameters(capsys):
    assert main.main(["validate", "--scenario", "linear2d"]) == main.EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["params"]["kappa_hat"] == pytest.approx(0.168)
    assert data["params"]["alpha_star"] == pytest.approx(0.024)
    assert data["params"]["h_star"] == 0.25
    assert data["lipschitz_certified"] is True


def test_validate_with_lipschitz_estimate(capsys):
    assert main.main(["validate", "--scenario", "linear2d", "--estimate-lipschitz", "--samples", "5"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["lipschitz_estimate"]["raw"] == pytest.approx(1.0)
    assert data["lipschitz_estimate"]["certified"] is False


def test_validate_infinite_kappa_is_strict_json(capsys):
    assert main.main(["validate", "--scenario", "linear2d", "--kappa-override", "inf"]) == main.EXIT_OK
    out = capsys.readouterr().out
    assert "Infinity" not in out
    data = json.loads(out)
    assert data["params"]["kappa_hat"] == "inf" and data["params"]["kappa_source"] == "override"


def test_run_report_with_infinite_kappa_is_strict_json(temp_output_dir):
    assert main.main(["run", "--scenario", "linear2d", "--T", "0.2", "--kappa-override", "inf"]) == main.EXIT_OK
    text = (temp_output_dir / "linear2d_boundary_report.json").read_text(encoding="utf-8")
    assert "Infinity" not in text
    assert json.loads(text)["params"]["kappa_override"] == "inf"


def test_plain_value_error_is_invalid_input(monkeypatch, caplog):
    def broken(args):
        raise ValueError("samples_per_axis must be >= 2")

    monkeypatch.setitem(main.COMMANDS, "validate", broken)
    assert main.main(["validate", "--scenario", "linear2d"]) == main.EXIT_INVALID
    assert "Invalid input: samples_per_axis" in caplog.text


def test_too_few_lipschitz_samples_is_invalid_input():
    args = ["validate", "--scenario", "linear2d", "--estimate-lipschitz", "--samples", "1"]
    assert main.main(args) == main.EXIT_INVALID


def test_validate_beta_star_out_of_range():
    assert main.main(["validate", "--scenario", "linear2d", "--beta-star", "0.016"]) == main.EXIT_INVALID


def test_compare_linear_all_equal(temp_output_dir):
    assert main.main(["compare", "--scenario", "linear2d", "--h", "0.2", "--T", "1"]) == main.EXIT_OK
    data = json.loads((temp_output_dir / "linear2d_boundary_compare.json").read_text(encoding="utf-8"))
    assert data["all_equal"] is True
    assert len(data["steps"]) == 6


def test_compare_preliminary_variant(temp_output_dir):
    args = ["compare", "--scenario", "linear2d", "--T", "0.6", "--variant", "preliminary", "--threads", "2"]
    assert main.main(args) == main.EXIT_OK
    assert (temp_output_dir / "linear2d_preliminary_compare.json").exists()


def test_compare_expected_mismatch(temp_output_dir):
    args = ["compare", "--scenario", "twopoints", "--no-strict", "--expect-mismatch"]
    assert main.main(args) == main.EXIT_OK
    data = json.loads((temp_output_dir / "twopoints_boundary_compare.json").read_text(encoding="utf-8"))
    assert data["all_equal"] is False
    step = data["steps"][1]
    assert step["outer_diff_cells"] > 0
    diff, kind = read_csv(temp_output_dir / step["outer_diff_file"])
    assert kind == "outer" and (5, 0) in diff


def test_compare_mismatch_exit_codes():
    assert main.main(["compare", "--scenario", "twopoints", "--no-strict"]) == main.EXIT_MISMATCH
    assert main.main(["compare", "--scenario", "linear2d", "--T", "0.4", "--expect-mismatch"]) == main.EXIT_MISMATCH


def test_compare_strict_disconnected_is_runtime_error():
    assert main.main(["compare", "--scenario", "twopoints"]) == main.EXIT_RUNTIME


def test_run_dumps_reingest_to_in_memory_states(temp_output_dir):
    args = ["run", "--scenario", "linear2d", "--T", "0.6", "--variant", "boundary", "--dump"]
    assert main.main(args) == main.EXIT_OK
    expected = scheme.run(
        "boundary", scenarios.build_scenario(scenarios.with_overrides(scenarios.get_builtin("linear2d"), T=0.6)),
        keep_states=True,
    ).states
    for state in expected:
        boundary, kind = read_csv(dump_path(temp_output_dir, "linear2d", "boundary", state.step_index, "boundary"))
        outer, _ = read_csv(dump_path(temp_output_dir, "linear2d", "boundary", state.step_index, "outer"))
        assert kind == "boundary"
        assert boundary == state.boundary and outer == state.outer
    data = json.loads((temp_output_dir / "linear2d_boundary_report.json").read_text(encoding="utf-8"))
    assert [s["boundary_cells"] for s in data["steps"]] == [1, 40, 88, 144]


def test_run_full_variant_writes_full_dump(temp_output_dir):
    assert main.main(["run", "--scenario", "linear2d", "--T", "0.2", "--variant", "full", "--dump"]) == 0
    full, kind = read_csv(dump_path(temp_output_dir, "linear2d", "full", 1, "full"))
    assert kind == "full" and len(full) == 121


def test_run_with_config_file(temp_output_dir, tmp_path):
    cfg = scenarios.with_overrides(scenarios.get_builtin("annulus"), T=0.4, name="ring")
    path = tmp_path / "ring.json"
    scenarios.emit_config(cfg, path)
    out = tmp_path / "elsewhere"
    assert main.main(["run", "--config", str(path), "--out", str(out)]) == 0
    data = json.loads((out / "ring_boundary_report.json").read_text(encoding="utf-8"))
    assert data["steps"][0]["components"] == 2
    assert data["metadata"]["initial_chain_connected"] is True


def test_bad_config_file_is_invalid(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "x", "dim": 2, "drift": ["x1 +", "x2"]}), encoding="utf-8")
    assert main.main(["run", "--config", str(path)]) == main.EXIT_INVALID


def test_topology_writes_counts(temp_output_dir):
    assert main.main(["topology", "--scenario", "annulus"]) == main.EXIT_OK
    data = json.loads((temp_output_dir / "annulus_boundary_topology.json").read_text(encoding="utf-8"))
    first, last = data["steps"][0], data["steps"][-1]
    assert (first["boundary_components"], first["enclosed_voids"]) == (2, 1)
    assert (last["boundary_components"], last["enclosed_voids"]) == (1, 0)


def test_study_writes_table(temp_output_dir):
    assert main.main(["study", "--scenario", "linear2d", "--h-list", "0.2,0.1", "--no-full"]) == main.EXIT_OK
    lines = (temp_output_dir / "linear2d_study.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("h,rho,T,time_full_s")
    assert lines[1].startswith("0.2,0.04")
    assert any(line.startswith("# order_h=0.8") for line in lines)
    assert (temp_output_dir / "linear2d_study.json").exists()


def test_study_rejects_scenarios_without_closed_form():
    assert main.main(["study", "--scenario", "annulus", "--h-list", "0.2", "--no-full"]) == main.EXIT_INVALID


def test_thread_count_fallback(monkeypatch):
    assert config.get_thread_count(3) == 3
    monkeypatch.setattr("config.INCLUSION_REACH_THREADS", "4")
    assert config.get_thread_count() == 4
    monkeypatch.setattr("config.INCLUSION_REACH_THREADS", "many")
    assert config.get_thread_count() == 1
