"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import math

import numpy as np
import pytest
from scipy import optimize

from nlramsey.campaign import CampaignConfig, analyze_dataset, emit_plot_data, run_campaign, save_dataset
from nlramsey.estimator import (
    DegenerateContrastError,
    RamseyTriple,
    differential_phase_estimate,
    invert_three_point,
    optimal_bias,
    phase_per_epsilon,
    propagate_phase_uncertainty,
    wrap_phase,
)
from nlramsey.nonlinear import (
    NonlinearCoupling,
    SuperpositionSpec,
    differential_phase_model,
    phase_rate_closed_form,
    phase_rate_numeric,
)
from nlramsey.oscillator import TrapConfig
from nlramsey.scan import curves, interior_minimum, simulate_tau_scan
from nlramsey.simulator import NoiseModel, ShotSimulator, contrast_envelope

ISO = TrapConfig.isotropic(10e-9)
REF_TRAP = TrapConfig.reference_trap()
TH1, TH2 = 2 * math.asin(math.sqrt(0.2)), 2 * math.asin(math.sqrt(0.8))
SEED = 2022


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return _report


def test_criterion_01_oracle_equivalence(report):
    c = NonlinearCoupling(1e-12)
    worst = 0.0
    for p0 in (0.1, 0.2, 0.5, 0.8, 0.9):
        spec = SuperpositionSpec.from_ground_population(p0)
        a = phase_rate_closed_form(spec, ISO, c).rate
        b = phase_rate_numeric(spec, ISO, c, "ground", cross_terms=False).rate
        worst = max(worst, abs(b - a) / abs(a))
    report(1, worst < 0.01, f"max relative difference {worst:.2e} (limit 1e-2)")


def test_criterion_02_phase_rate_magnitude(report):
    r = phase_rate_closed_form(SuperpositionSpec.from_ground_population(0.5), ISO, NonlinearCoupling(1.0)).rate
    per_ms = abs(r) * 1e-3
    report(2, 0.5e10 <= per_ms <= 5e10, f"|phi_NL| per ms per unit epsilon = {per_ms:.4e} rad")


def test_criterion_03_inversion_round_trip(report):
    worst = 0.0
    for A in np.linspace(0.05, 1.0, 12):
        for B in np.linspace(0.25, 0.75, 7):
            if B - A / 2 < 0 or B + A / 2 > 1:
                continue
            for Phi in np.linspace(-math.pi, math.pi, 72, endpoint=False) + 1e-3:
                for xi1 in (0.0, 0.37, -1.2):
                    e = invert_three_point(RamseyTriple.from_model(Phi, A, B, xi1=xi1))
                    worst = max(worst, abs(wrap_phase(e.Phi - Phi)), abs(e.A - A), abs(e.B - B))
    report(3, worst <= 1e-12, f"worst round-trip error {worst:.2e} (limit 1e-12)")


def test_criterion_04_qpn_propagation(report):
    A, B, N, Phi = 0.8, 0.5, 200, 0.0
    xi1 = optimal_bias(Phi)
    t = RamseyTriple.from_model(Phi, A, B, xi1=xi1, N=N)
    g = np.random.default_rng(SEED)
    counts = g.binomial(N, t.populations, size=(10_000, 3)) / N
    phis = []
    for row in counts:
        try:
            phis.append(invert_three_point(RamseyTriple(*row, N=N, xi1=xi1)).Phi)
        except DegenerateContrastError:
            pass
    mc = float(np.std(wrap_phase(np.asarray(phis) - Phi), ddof=1))
    lin = propagate_phase_uncertainty(t)
    worked = propagate_phase_uncertainty(RamseyTriple(0.5, 0.9, 0.5, N=200))
    ok = abs(mc / lin - 1) < 0.05 and abs(worked / 0.0625 - 1) < 0.05
    report(4, ok, f"MC/linearized = {mc / lin:.4f}; worked value {worked:.5f} rad vs 0.0625")


def test_criterion_05_common_mode_rejection(report):
    sim = ShotSimulator(REF_TRAP, NonlinearCoupling(1e-12), NoiseModel.noiseless())
    tau = 0.015
    expected = differential_phase_model(TH1, TH2, tau, REF_TRAP, NonlinearCoupling(1e-12))
    worst = 0.0
    for detuning in (0.0, 2 * math.pi * 1, 2 * math.pi * 5):
        for stark in (0.0, 0.1, 1.0):
            ests = []
            for th in (TH1, TH2):
                xi1 = optimal_bias(detuning * tau + stark)
                P = sim.mean_excitation(th, xi1 + np.array([0, math.pi / 2, math.pi]), tau, detuning, stark,
                                        trajectories=0)
                ests.append(invert_three_point(RamseyTriple(*P, N=200, xi1=xi1)))
            dphi, _ = differential_phase_estimate(*ests)
            worst = max(worst, abs(wrap_phase(dphi - expected)))
    report(5, worst <= 1e-12, f"max deviation of delta phi_NL {worst:.2e} rad (limit 1e-12)")


def test_criterion_06_heating_envelope(report):
    ndot = 10.0
    taus = [0.005, 0.01, 0.015, 0.025]
    pts = contrast_envelope(ndot, taus, 10_000, SEED)
    pulls = [(p.A - math.exp(-ndot * p.tau)) / p.A_stderr for p in pts]
    A = np.array([p.A for p in pts])
    err = np.array([p.A_stderr for p in pts])
    (a0, k), cov = optimize.curve_fit(lambda t, a0, k: a0 * np.exp(-k * t), taus, A, p0=(1.0, ndot), sigma=err,
                                      absolute_sigma=True)
    k_pull = (k - ndot) / math.sqrt(cov[1, 1])
    ok = all(abs(z) < 3 for z in pulls) and abs(k_pull) < 3
    report(6, ok, "pulls " + ", ".join(f"{z:+.2f}" for z in pulls)
           + f"; fitted rate {k:.2f}/s ({k_pull:+.2f} sigma); A(15 ms) = {pts[2].A:.4f}")


def test_criterion_07_tau_scan_shape(report):
    pts = simulate_tau_scan(REF_TRAP, NoiseModel(), repetitions=2000, trajectories=1000, master_seed=SEED)
    c = curves(pts)
    taus, mid = c[10.0]
    lo, hi = c[7.0][1], c[13.0][1]
    minimum = interior_minimum(taus, mid)
    inside = bool(np.all((np.minimum(lo, hi) <= mid) & (mid <= np.maximum(lo, hi))))
    report(7, minimum is not None and inside,
           f"interior minimum at {minimum} s; heating-10 curve inside the 7-13 band: {inside}")


@pytest.fixture(scope="module")
def null_campaign():
    cfg = CampaignConfig.reference_defaults(blocks=200, master_seed=SEED)
    return analyze_dataset(run_campaign(cfg))


@pytest.fixture(scope="module")
def injected_campaign():
    cfg = CampaignConfig.reference_defaults(blocks=200, master_seed=SEED, coupling=NonlinearCoupling(1e-10))
    return analyze_dataset(run_campaign(cfg))


def test_criterion_08_null_and_injection(report, null_campaign, injected_campaign):
    z0 = null_campaign.pooled.value / null_campaign.pooled.sigma
    z1 = (injected_campaign.pooled.value - 1e-10) / injected_campaign.pooled.sigma
    ok = abs(z0) < 3 and abs(z1) < 3 and not null_campaign.excluded_blocks and not injected_campaign.excluded_blocks
    report(8, ok, f"null {null_campaign.pooled.value:.3e} ({z0:+.2f} sigma); "
                  f"injected {injected_campaign.pooled.value:.4e} ({z1:+.2f} sigma, {injected_campaign.cycles} cycles)")


def test_criterion_09_uncertainty_consistency(report, null_campaign, injected_campaign):
    r0 = null_campaign.uncertainty_ratio
    r1 = injected_campaign.uncertainty_ratio
    ok = abs(r0 - 1) <= 0.15 and abs(r1 - 1) <= 0.15
    report(9, ok, f"mean propagated / sample std: null {r0:.3f}, injected {r1:.3f}")


def _aliasing_config(**kw):
    eps = 2 * math.pi / phase_per_epsilon(TH1, TH2, 0.015, REF_TRAP)
    return CampaignConfig.reference_defaults(blocks=5, master_seed=SEED, coupling=NonlinearCoupling(eps), **kw)


def test_criterion_10_golden_ratio_guard(report):
    cfg = _aliasing_config()
    rep = analyze_dataset(run_campaign(cfg))
    main_wrapped = np.mean([b["delta_phi_wrapped"] for b in rep.blocks])
    sig = rep.control["significance"]
    ok = sig > 5 and rep.cycles == 1
    report(10, ok, f"main wrapped delta phi {main_wrapped:+.3f} rad; control at {cfg.tau_control * 1e3:.3f} ms "
                   f"gives {rep.control['delta_phi_mean']:+.3f} rad ({sig:.1f} sigma); cycles resolved {rep.cycles}")


def test_criterion_11_determinism(report, tmp_path):
    outputs = []
    for k, threads in enumerate((1, 1, 2)):
        ds = run_campaign(_aliasing_config(), threads=threads)
        d = tmp_path / str(k)
        d.mkdir()
        save_dataset(ds, d / "dataset.ndjson")
        rep = analyze_dataset(ds)
        (d / "report.json").write_text(json.dumps(rep.to_dict(), sort_keys=True))
        emit_plot_data(rep, "epsilon_histogram", d)
        outputs.append([(d / f).read_bytes() for f in ("dataset.ndjson", "report.json", "epsilon_histogram.csv")])
    env = [emit_plot_data(contrast_envelope(10.0, [0.015], 1000, SEED), "contrast_envelope", tmp_path / f"e{k}")
           .read_bytes() for k in range(2)]
    ok = outputs[0] == outputs[1] == outputs[2] and env[0] == env[1]
    report(11, ok, "datasets, reports and plot data byte-identical across reruns and thread counts")
