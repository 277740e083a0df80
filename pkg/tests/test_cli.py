"""End-to-end command pipeline: artifacts, exit codes, determinism, chaining."""

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fcrbess import cli
from fcrbess.artifacts import sha256_file
from fcrbess.freq import (FrequencyScenarioSet, save_scenario_set,
                          synth_frequency_csv, synth_frequency_matrix)
from fcrbess.model import TimeGrid, efficiency_fold
from fcrbess.policies import load_policy
from fcrbess.scenarios import load_profile_set, save_profile_set, synth_profiles
from fcrbess.uncertainty import load_model

ETA = math.sqrt(0.9)
GRID = TimeGrid(6, 4.0)


@pytest.fixture(scope="module")
def assets(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliassets")
    raw = synth_frequency_matrix(40, GRID, seed=11)
    save_scenario_set(FrequencyScenarioSet(raw, GRID, folded=False),
                      root / "days_unfolded.csv")
    save_scenario_set(
        FrequencyScenarioSet(efficiency_fold(raw, ETA, ETA), GRID,
                             folded=True, eta_c=ETA, eta_d=ETA),
        root / "days_folded.csv")
    save_profile_set(root / "profiles.csv",
                     synth_profiles("net", GRID, 12, seed=5))
    (root / "config.json").write_text(
        json.dumps({"n_t": 6, "dt": 4.0, "epsilon": 0.05}))
    return root


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def base(assets, out) -> list:
    return ["--config", assets / "config.json", "--out-dir", out]


@pytest.fixture(scope="module")
def trained(assets, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert run("fit", *base(assets, out),
               "--scenario-csv", assets / "days_folded.csv") == 0
    assert run("optimize", "fcr", *base(assets, out),
               "--model", out / "model.json") == 0
    assert run("optimize", "combined", *base(assets, out),
               "--model", out / "model.json",
               "--profile-csv", assets / "profiles.csv") == 0
    return out


# --- ingest ---------------------------------------------------------------------

def test_ingest_writes_sets_and_report(assets, tmp_path):
    freq_csv = tmp_path / "freq.csv"
    # punch a 2-minute hole in the second day so cleaning rejects it
    synth_frequency_csv(freq_csv, 2, seed=3, gap_spec=[(1, 7000, 120)])
    out = tmp_path / "out"
    assert run("ingest", *base(assets, out), "--frequency-csv", freq_csv) == 0
    report = json.loads((out / "ingest.json").read_text())
    assert report["kind"] == "ingest_report"
    assert report["n_days_kept"] == 1
    assert report["n_days_rejected"] == 1
    assert report["inputs"]["frequency_csv"]["sha256"] == sha256_file(freq_csv)
    assert np.loadtxt(out / "days_unfolded.csv", delimiter=",",
                      ndmin=2).shape == (1, 6)
    assert (out / "days_folded.csv").exists()


def test_missing_input_exits_2(assets, tmp_path):
    assert run("ingest", *base(assets, tmp_path),
               "--frequency-csv", tmp_path / "nope.csv") == 2
    assert run("fit", *base(assets, tmp_path)) == 2  # flag absent entirely


# --- fit / optimize -------------------------------------------------------------

def test_fit_records_inputs_and_epsilon(assets, trained):
    model = load_model(trained / "model.json")
    assert model.epsilon == 0.05
    prov = model.provenance
    assert prov["scenario_sha256"] == sha256_file(assets / "days_folded.csv")
    assert prov["folded"] is True


def test_epsilon_flag_overrides_config(assets, tmp_path):
    out = tmp_path / "out"
    assert run("fit", *base(assets, out),
               "--scenario-csv", assets / "days_folded.csv",
               "--epsilon", "0.2") == 0
    assert load_model(out / "model.json").epsilon == 0.2


def test_unknown_config_key_exits_2(assets, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_t": 6, "battery_size": 10}))
    assert run("fit", "--config", bad,
               "--scenario-csv", assets / "days_folded.csv") == 2


def test_invalid_parameter_exits_2(assets, tmp_path):
    assert run("fit", *base(assets, tmp_path),
               "--scenario-csv", assets / "days_folded.csv",
               "--eta-c", "2.0") == 2


def test_optimize_fcr_artifact(trained):
    policy, envelope, meta = load_policy(trained / "policy_fcr.json")
    assert policy.r > 0.1
    assert meta["kind"] == "optimize_fcr"
    assert meta["status"] == "optimal"
    assert meta["inputs"]["model"]["sha256"] == sha256_file(
        trained / "model.json")
    assert np.all(envelope.p_max_sc == 0.0)  # reserve-only: pinned envelope


def test_optimize_combined_artifact(trained):
    policy, envelope, meta = load_policy(trained / "policy_combined.json")
    assert meta["kind"] == "optimize_combined"
    assert meta["objective_eur"] == pytest.approx(
        meta["sc_cost_eur"] - meta["fcr_revenue_eur"], abs=1e-9)
    assert np.any(envelope.e_max_sc > envelope.e_min_sc - 1e-9)


def test_optimize_rerun_is_byte_identical(assets, trained, tmp_path):
    out = tmp_path / "out"
    args = ("optimize", "fcr", *base(assets, out),
            "--model", trained / "model.json")
    assert run(*args) == 0
    first = (out / "policy_fcr.json").read_bytes()
    assert run(*args) == 0
    assert (out / "policy_fcr.json").read_bytes() == first


def test_infeasible_reserve_exits_3(assets, trained, tmp_path):
    assert run("optimize", "fcr", *base(assets, tmp_path),
               "--model", trained / "model.json", "--fix-r", "20.0") == 3


# --- reduce ---------------------------------------------------------------------

def test_reduce_pipeline(assets, tmp_path):
    out = tmp_path / "out"
    assert run("reduce", *base(assets, out),
               "--profile-csv", assets / "profiles.csv",
               "--target-n", "5") == 0
    reduced = load_profile_set(out / "profiles_reduced.csv")
    assert reduced.n_sc == 5
    assert reduced.weights.sum() == pytest.approx(1.0, abs=1e-9)
    report = json.loads((out / "reduce.json").read_text())
    assert (report["n_in"], report["n_out"]) == (12, 5)
    assert run("reduce", *base(assets, out),
               "--profile-csv", assets / "profiles.csv",
               "--target-n", "40") == 2


# --- gap ------------------------------------------------------------------------

def test_gap_report_and_determinism(assets, trained, tmp_path):
    out = tmp_path / "out"
    args = ("gap", *base(assets, out), "--model", trained / "model.json",
            "--seed", "9", "--gap-n-u", "60", "--gap-n-l", "2",
            "--gap-n-sc", "4")
    assert run(*args) == 0
    blob = json.loads((out / "gap.json").read_text())
    assert blob["kind"] == "gap_report"
    assert blob["n_U"] == 60 and blob["n_L"] == 2 and blob["n_sc"] == 4
    assert blob["gap"] >= blob["upper_mean"] - blob["lower_mean"] - 1e-12
    first = (out / "gap.json").read_bytes()
    assert run(*args) == 0
    assert (out / "gap.json").read_bytes() == first


def test_gap_requires_seed(assets, trained, tmp_path):
    assert run("gap", *base(assets, tmp_path),
               "--model", trained / "model.json") == 2


# --- simulate -------------------------------------------------------------------

def test_simulate_chains_policy_hash(assets, trained, tmp_path):
    out = tmp_path / "out"
    args = ("simulate", *base(assets, out),
            "--policy", trained / "policy_fcr.json",
            "--scenario-csv", assets / "days_unfolded.csv",
            "--seed", "21", "--n-samples", "300")
    assert run(*args) == 0
    report = out / "simulation_policy_fcr.json"
    blob = json.loads(report.read_text())
    assert blob["kind"] == "simulation_report"
    assert blob["inputs"]["policy"]["sha256"] == sha256_file(
        trained / "policy_fcr.json")
    assert blob["n_samples"] == 300
    p_hat = blob["max_violation_prob_hat"]
    assert 0.0 <= p_hat <= blob["upper_conf_bound"] <= 1.0
    first = report.read_bytes()
    assert run(*args) == 0
    assert report.read_bytes() == first


def test_simulate_combined_reports_revenue(assets, trained, tmp_path):
    out = tmp_path / "out"
    assert run("simulate", *base(assets, out),
               "--policy", trained / "policy_combined.json",
               "--scenario-csv", assets / "days_unfolded.csv",
               "--profile-csv", assets / "profiles.csv",
               "--seed", "4", "--n-samples", "200",
               "--trajectories", "3") == 0
    blob = json.loads((out / "simulation_policy_combined.json").read_text())
    rev = blob["revenue"]
    assert rev["mean_total"] == pytest.approx(
        rev["sc_mean"] + rev["fcr_part"], abs=1e-9)
    lines = (out / "trajectories_policy_combined.csv").read_text().splitlines()
    assert lines[0] == "sample,step,energy,p_rc,p_reserve,p_sc"
    assert len(lines) == 1 + 3 * 6


def test_simulate_requires_seed_and_unfolded(assets, trained, tmp_path):
    common = ("simulate", *base(assets, tmp_path),
              "--policy", trained / "policy_fcr.json")
    assert run(*common, "--scenario-csv", assets / "days_unfolded.csv") == 2
    assert run(*common, "--scenario-csv", assets / "days_folded.csv",
               "--seed", "1") == 2


def test_simulate_combined_needs_profiles(assets, trained, tmp_path):
    assert run("simulate", *base(assets, tmp_path),
               "--policy", trained / "policy_combined.json",
               "--scenario-csv", assets / "days_unfolded.csv",
               "--seed", "2") == 2


# --- studies --------------------------------------------------------------------

def test_study_epsilon_r_nondecreasing(assets, trained, tmp_path):
    out = tmp_path / "out"
    assert run("study", "epsilon", *base(assets, out),
               "--model", trained / "model.json",
               "--epsilons", "0.001,0.01,0.1") == 0
    rows = np.loadtxt(out / "study_epsilon.csv", delimiter=",", skiprows=1,
                      ndmin=2)
    assert rows.shape == (3, 3)
    r = rows[:, 2]
    assert np.all(np.diff(r) >= -1e-7)
    assert r[-1] > r[0]


def test_study_crate_columns(assets, trained, tmp_path):
    out = tmp_path / "out"
    assert run("study", "crate", *base(assets, out),
               "--model", trained / "model.json",
               "--crates", "0.5,1.0") == 0
    rows = np.loadtxt(out / "study_crate.csv", delimiter=",", skiprows=1,
                      ndmin=2)
    assert rows.shape == (2, 4)
    assert np.all(rows[:, 2] > 0)
    np.testing.assert_allclose(rows[:, 3], rows[:, 2] / 10.0, rtol=1e-12)
    assert rows[1, 2] >= rows[0, 2] - 1e-7  # more power never shrinks r


def test_study_price_tradeoff(assets, trained, tmp_path):
    out = tmp_path / "out"
    assert run("study", "price", *base(assets, out),
               "--model", trained / "model.json",
               "--profile-csv", assets / "profiles.csv",
               "--c-r-grid", "0.0,15.0,60.0") == 0
    rows = np.loadtxt(out / "study_price.csv", delimiter=",", skiprows=1,
                      ndmin=2)
    sc_rev, fcr_rev = rows[:, 2], rows[:, 3]
    assert np.all(np.diff(fcr_rev) >= -1e-7)
    assert np.all(np.diff(sc_rev) <= 1e-7)
    blob = json.loads((out / "study_price.json").read_text())
    assert blob["header"][0] == "c_r"


# --- entry point ----------------------------------------------------------------

def test_module_entry_help():
    proc = subprocess.run([sys.executable, "-m", "fcrbess.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout
