import json
import logging
import math

import numpy as np
import pytest
from scipy import stats

from nlramsey import campaign as cmp
from nlramsey.campaign import (
    FORMAT_VERSION,
    CampaignConfig,
    ConfigError,
    analyze_dataset,
    config_from_dict,
    emit_plot_data,
    load_config,
    load_dataset,
    run_campaign,
    save_config,
    save_dataset,
    write_shot_csv,
)
from nlramsey.nonlinear import NonlinearCoupling
from nlramsey.simulator import EnvelopePoint

REFERENCE_YAML = """
trap:
  mass_amu: 39.96259
  freq_x_hz: 1.01e6
  freq_y_hz: 2.52e6
  freq_z_hz: 2.79e6
  nbar_y: 3
  nbar_z: 3
noise:
  heating_rate: 10
campaign:
  tau_main: 0.015
  shots_per_point: 200
  theta_populations: [0.2, 0.8]
  blocks: 4
"""


def small_config(**kw):
    base = dict(blocks=3, shots_per_point=40, master_seed=99)
    base.update(kw)
    return CampaignConfig.reference_defaults(**base)


def test_reference_config_accepted(tmp_path, caplog):
    path = tmp_path / "reference.yaml"
    path.write_text(REFERENCE_YAML)
    with caplog.at_level(logging.INFO, logger="nlramsey.campaign"):
        cfg = load_config(path)
    assert cfg.trap.x0_x == pytest.approx(15.8e-9, rel=3e-3)
    assert cfg.derived()["x0_x"] == cfg.trap.x0_x
    assert "x0_x" in caplog.text
    assert math.sin(cfg.thetas[0] / 2) ** 2 == pytest.approx(0.2)
    assert cfg.tau_control == pytest.approx(0.009271, abs=1e-6)
    assert cfg.noise.heating_rate == 10


def test_equal_populations_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(REFERENCE_YAML.replace("[0.2, 0.8]", "[0.5, 0.5]"))
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert any("distinct" in p for p in err.value.problems)


def test_every_failed_field_listed():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"campaign": {"blocks": 0, "shots_per_point": 0, "tau_main": -1}, "extra": {}})
    text = " ".join(err.value.problems)
    for word in ("blocks", "shots_per_point", "tau_main", "extra"):
        assert word in text
    with pytest.raises(ConfigError):
        config_from_dict({"trap": {"nu_x": -5}})


def test_tau_control_must_match_golden_ratio():
    with pytest.raises(ConfigError):
        config_from_dict({"campaign": {"tau_main": 0.015, "tau_control": 0.010}})
    cfg = config_from_dict({"campaign": {"tau_main": 0.015, "tau_control": 0.015 * 2 / (1 + math.sqrt(5))}})
    assert cfg.control


def test_config_round_trip(tmp_path):
    cfg = small_config(coupling=NonlinearCoupling(3e-11), correction_factor="auto", truth_rate_method="numeric_secular",
                       truth_transverse="thermal")
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again == cfg
    assert again.resolved_correction_factor() == pytest.approx(0.4712, abs=1e-3)


def test_cycle_search_limited_by_noise(caplog):
    # 40 shots per point leave the control phase too noisy to test more than one cycle
    cfg = small_config(blocks=3, coupling=NonlinearCoupling(1e-10))
    with caplog.at_level(logging.WARNING):
        rep = analyze_dataset(run_campaign(cfg))
    assert rep.control["cycle_search_limit"] < 2
    assert "cycle search limited" in caplog.text


def test_auto_correction_outside_unit_interval_rejected():
    cfg = small_config(correction_factor="auto", truth_rate_method="numeric_secular", truth_transverse="ground")
    with pytest.raises(ConfigError):
        cfg.resolved_correction_factor()


# -- running ----------------------------------------------------------------


@pytest.fixture(scope="module")
def dataset():
    return run_campaign(small_config(shots_per_point=200))


def test_block_structure(dataset):
    cfg = small_config(shots_per_point=200)
    sh = dataset.shots
    for b in range(cfg.blocks):
        main = (sh.block == b) & (sh.tau == cfg.tau_main) & (sh.label != cmp.THETA_LABELS.index("calibration"))
        assert main.sum() == 1200
        for lab in (0, 1):
            for xi in (1, 2, 3):
                assert np.sum(main & (sh.label == lab) & (sh.xi_index == xi)) == 200
        ctrl = (sh.block == b) & (sh.tau == cfg.tau_control)
        assert ctrl.sum() == 1200 + 600
    rec = dataset.calibration_records[0]
    assert set(rec) >= {"block", "theta_calibration", "main", "control", "truth"}
    assert rec["control"]["tau"] == pytest.approx(0.015 / 1.6180, rel=1e-4)
    assert len(np.unique(sh.seed)) == len(sh)


def test_dataset_bytes_deterministic(tmp_path, dataset):
    save_dataset(dataset, tmp_path / "a.ndjson")
    save_dataset(run_campaign(small_config(shots_per_point=200)), tmp_path / "b.ndjson")
    save_dataset(run_campaign(small_config(shots_per_point=200), threads=2), tmp_path / "c.ndjson")
    a = (tmp_path / "a.ndjson").read_bytes()
    assert a == (tmp_path / "b.ndjson").read_bytes() == (tmp_path / "c.ndjson").read_bytes()
    save_dataset(run_campaign(small_config(shots_per_point=200, master_seed=100)), tmp_path / "d.ndjson")
    assert a != (tmp_path / "d.ndjson").read_bytes()


def test_dataset_round_trip(tmp_path, dataset):
    path = tmp_path / "ds.ndjson"
    save_dataset(dataset, path)
    back = load_dataset(path)
    assert back.format_version == FORMAT_VERSION
    assert back.calibration_records == dataset.calibration_records
    assert np.array_equal(back.shots.outcome, dataset.shots.outcome)
    assert np.array_equal(back.shots.seed, dataset.shots.seed)
    assert json.dumps(analyze_dataset(back).to_dict(), sort_keys=True) == json.dumps(
        analyze_dataset(dataset).to_dict(), sort_keys=True)


def test_unknown_version_rejected(tmp_path, dataset):
    path = tmp_path / "ds.ndjson"
    save_dataset(dataset, path)
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace(FORMAT_VERSION, "nlramsey-dataset/99")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="unsupported"):
        load_dataset(path)
    dataset_copy = cmp.CampaignDataset(dataset.shots, dataset.calibration_records, dataset.config_snapshot, "v0")
    with pytest.raises(ValueError):
        analyze_dataset(dataset_copy)


def test_shot_csv_columns(tmp_path, dataset):
    path = tmp_path / "shots.csv"
    recs = list(dataset.shot_records)[:5]
    write_shot_csv(recs, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "tau_s,theta_label,xi_index,outcome,seed,jump_count"
    assert len(lines) == 6


def test_interleaving_exchangeable():
    cfg = small_config(blocks=60, shots_per_point=30, control=False, theta_drift_fraction=0.0)
    ds = run_campaign(cfg)
    sh = ds.shots
    table = np.zeros((6, 10))
    for b in range(cfg.blocks):
        sel = (sh.block == b) & (sh.label != 2)
        labels, xis = sh.label[sel], sh.xi_index[sel]
        cell = labels * 3 + (xis - 1)
        pos = np.arange(cell.size) * 10 // cell.size
        np.add.at(table, (cell, pos), 1)
    _, p, _, _ = stats.chi2_contingency(table)
    assert p > 1e-3


def test_aborted_block_logged(monkeypatch, caplog):
    original = cmp._ramsey_run

    def flaky(sim, cfg, block, *args):
        if block == 1:
            raise RuntimeError("simulated failure")
        return original(sim, cfg, block, *args)

    monkeypatch.setattr(cmp, "_ramsey_run", flaky)
    with caplog.at_level(logging.WARNING):
        ds = run_campaign(small_config())
    assert "block 1 aborted" in caplog.text
    assert "aborted" in ds.calibration_records[1]
    report = analyze_dataset(ds)
    assert report.excluded_blocks == [1]
    assert [b["block"] for b in report.blocks] == [0, 2]


def test_degenerate_block_excluded(caplog):
    ds = run_campaign(small_config())
    sh = ds.shots
    sh.outcome[(sh.block == 0) & (sh.tau == 0.015)] = 0
    with caplog.at_level(logging.WARNING):
        report = analyze_dataset(ds)
    assert 0 in report.excluded_blocks
    assert "excluded" in caplog.text


# -- analysis ----------------------------------------------------------------


def test_report_contents(dataset):
    rep = analyze_dataset(dataset)
    d = rep.to_dict()
    for key in ("delta_phi", "sigma", "epsilon", "sigma_epsilon", "A", "B", "blocks", "uncertainty_ratio",
                "gaussian_fit", "control", "cycles"):
        assert key in d
    assert len(d["blocks"]) == 3
    assert 0.3 < d["A"] < 1
    assert rep.pooled.sigma > 0
    assert rep.cycles == 0


def test_injected_signal_recovered_with_cycles():
    cfg = small_config(blocks=8, shots_per_point=200, coupling=NonlinearCoupling(1e-10), theta_drift_fraction=0.0)
    rep = analyze_dataset(run_campaign(cfg))
    assert rep.control["cycle_search_limit"] >= 2
    assert rep.cycles == -2
    assert abs(rep.pooled.value - 1e-10) < 4 * rep.pooled.sigma


# -- plot data ---------------------------------------------------------------


def test_emit_plot_files(tmp_path, dataset):
    rep = analyze_dataset(dataset)
    p = emit_plot_data(rep, "epsilon_histogram", tmp_path)
    assert p.read_text().splitlines()[0] == "bin_center,count,gaussian_fit_value"
    p = emit_plot_data(dataset, "block_series", tmp_path / "b")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("block,delta_phi")
    assert len(lines) == 4
    env = [EnvelopePoint(0.005, 0.95, 0.01, 0.951), EnvelopePoint(0.015, 0.86, 0.01, 0.861)]
    p = emit_plot_data(env, "contrast_envelope", tmp_path)
    assert p.read_text().splitlines()[0] == "tau_s,A_mean,A_stderr,A_predicted_zero_jump"


def test_emit_plot_deterministic(tmp_path, dataset):
    rep = analyze_dataset(dataset)
    a = emit_plot_data(rep, "epsilon_histogram", tmp_path / "a").read_bytes()
    b = emit_plot_data(analyze_dataset(dataset), "epsilon_histogram", tmp_path / "b").read_bytes()
    assert a == b


def test_emit_plot_unknown_id(tmp_path, dataset):
    with pytest.raises(ValueError) as err:
        emit_plot_data(dataset, "fig9", tmp_path)
    for fid in cmp.FIGURE_IDS:
        assert fid in str(err.value)


def test_calibration_uncertainty_propagated(dataset):
    cal = [{"shots": 1000, "excited": 200, "theta_hat": 2 * math.asin(math.sqrt(0.2))},
           {"shots": 1000, "excited": 800, "theta_hat": 2 * math.asin(math.sqrt(0.8))}]
    # conversion factor is proportional to p1 - p2, so its relative error is hypot(sigma_p1, sigma_p2) / 0.6
    assert cmp._conversion_rel_sigma(cal, 0.0) == pytest.approx(math.sqrt(2 * 0.16 / 1000) / 0.6, rel=1e-12)
    for row in analyze_dataset(dataset).blocks:
        assert row["sigma_epsilon"] >= row["sigma_epsilon_qpn"]
