"""Simulated measurement campaigns: configuration, execution, persistence and analysis.

One block follows the experimental protocol:

1. theta calibration: carrier-only excitation measurement for both settings,
2. a balanced-superposition 3-point Ramsey run that sets the readout bias,
3. the main run, 2 theta settings x 3 readout phases x N shots, in random order,
4. optionally the same at the control interrogation time tau / golden ratio.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml

from . import rng as rngmod
from .estimator import (
    DegenerateContrastError,
    EpsilonEstimate,
    GaussianFit,
    RamseyTriple,
    circular_mean,
    cycle_search_limit,
    differential_phase_estimate,
    epsilon_from_delta_phase,
    fit_gaussian,
    invert_three_point,
    optimal_bias,
    resolve_cycles,
    wrap_phase,
)
from .nonlinear import CLOSED_FORM, RATE_METHODS, NonlinearCoupling, spread_correction_factor
from .oscillator import CONSTANTS, TrapConfig
from .simulator import NoiseModel, ShotRecord, ShotSimulator

log = logging.getLogger(__name__)

GOLDEN_RATIO = (1 + math.sqrt(5)) / 2
FORMAT_VERSION = "nlramsey-dataset/1"
THETA_LABELS = ("theta1", "theta2", "calibration")
RUN_MAIN, RUN_CONTROL = "main", "control"
XI_OFFSETS = (0.0, math.pi / 2, math.pi)


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration: " + "; ".join(problems))


@dataclass(frozen=True)
class CampaignConfig:
    trap: TrapConfig
    noise: NoiseModel
    coupling: NonlinearCoupling
    tau_main: float = 0.015
    control: bool = True
    theta_targets: tuple[float, float] = (0.2, 0.8)
    shots_per_point: int = 200
    blocks: int = 30
    master_seed: int = 2022
    dead_time: float = 0.0
    theta_drift_fraction: float = 0.01
    calibration_shots: int = 1000
    truth_rate_method: str = CLOSED_FORM
    truth_transverse: str = "ground"
    correction_factor: float | str = 1.0
    max_cycles: int = 20

    def __post_init__(self):
        problems = _validate(self)
        if problems:
            raise ConfigError(problems)
        # the campaign's shot count is authoritative
        if self.noise.shots_per_point != self.shots_per_point:
            object.__setattr__(self, "noise", replace(self.noise, shots_per_point=self.shots_per_point))

    @property
    def tau_control(self) -> float | None:
        return self.tau_main / GOLDEN_RATIO if self.control else None

    @property
    def thetas(self) -> tuple[float, float]:
        """Preparation angles giving the target ground-state populations, sin^2(theta/2) = p."""
        return tuple(2 * math.asin(math.sqrt(p)) for p in self.theta_targets)

    def resolved_correction_factor(self) -> float:
        if self.correction_factor != "auto":
            return float(self.correction_factor)
        if self.truth_rate_method == CLOSED_FORM:
            return 1.0
        cf = spread_correction_factor(self.trap, self.truth_transverse)
        if not 0 < cf <= 1:
            raise ConfigError([f"automatic correction factor {cf:.4g} lies outside (0, 1] for this trap"])
        return cf

    def derived(self) -> dict:
        return {
            "x0_x": self.trap.x0_x,
            "x0_y": self.trap.x0_y,
            "x0_z": self.trap.x0_z,
            "theta1": self.thetas[0],
            "theta2": self.thetas[1],
            "tau_control": self.tau_control,
            "main_shots_per_block": 6 * self.shots_per_point,
        }

    def to_dict(self) -> dict:
        n = self.noise
        return {
            "trap": {
                "mass_kg": self.trap.mass,
                "nu_x": self.trap.nu_x,
                "nu_y": self.trap.nu_y,
                "nu_z": self.trap.nu_z,
                "nbar_y": self.trap.nbar_y,
                "nbar_z": self.trap.nbar_z,
            },
            "noise": {
                "heating_rate": n.heating_rate,
                "heating_mode": n.heating_mode,
                "detuning": n.detuning,
                "detuning_drift_sigma": n.detuning_drift_sigma,
                "stark_phase": n.stark_phase,
                "spam_error": n.spam_error,
                "prep_n1_population": n.prep_n1_population,
            },
            "coupling": {"epsilon_gamma": self.coupling.epsilon_gamma},
            "campaign": {
                "tau_main": self.tau_main,
                "control": self.control,
                "theta_populations": list(self.theta_targets),
                "shots_per_point": self.shots_per_point,
                "blocks": self.blocks,
                "master_seed": self.master_seed,
                "dead_time": self.dead_time,
                "theta_drift_fraction": self.theta_drift_fraction,
                "calibration_shots": self.calibration_shots,
                "truth_rate_method": self.truth_rate_method,
                "truth_transverse": self.truth_transverse,
                "correction_factor": self.correction_factor,
                "max_cycles": self.max_cycles,
            },
        }

    @classmethod
    def reference_defaults(cls, **overrides) -> "CampaignConfig":
        """Reference trap (40Ca+, 1.01 MHz axial), 10 quanta/s heating and the default statistics."""
        base = dict(
            trap=TrapConfig.reference_trap(),
            noise=NoiseModel(heating_rate=10.0, detuning_drift_sigma=2 * math.pi * 0.5),
            coupling=NonlinearCoupling(0.0),
        )
        base.update(overrides)
        return cls(**base)


def _validate(cfg: CampaignConfig) -> list[str]:
    problems = []
    if not cfg.tau_main > 0:
        problems.append("campaign.tau_main must be positive")
    p = cfg.theta_targets
    if len(p) != 2:
        problems.append("campaign.theta_populations must have two entries")
    else:
        if not all(0 < x < 1 for x in p):
            problems.append("campaign.theta_populations must lie strictly between 0 and 1")
        if p[0] == p[1]:
            problems.append("campaign.theta_populations must be distinct (zero differential signal)")
    if cfg.shots_per_point < 1:
        problems.append("campaign.shots_per_point must be >= 1")
    if cfg.blocks < 1:
        problems.append("campaign.blocks must be >= 1")
    if not 0 <= cfg.master_seed < 2**64:
        problems.append("campaign.master_seed must be an unsigned 64-bit integer")
    if cfg.dead_time < 0:
        problems.append("campaign.dead_time must be non-negative")
    if cfg.theta_drift_fraction < 0:
        problems.append("campaign.theta_drift_fraction must be non-negative")
    if cfg.calibration_shots < 1:
        problems.append("campaign.calibration_shots must be >= 1")
    if cfg.truth_rate_method not in RATE_METHODS:
        problems.append(f"campaign.truth_rate_method must be one of {RATE_METHODS}")
    if cfg.truth_transverse not in ("ground", "thermal"):
        problems.append("campaign.truth_transverse must be 'ground' or 'thermal'")
    cf = cfg.correction_factor
    if cf != "auto" and not (isinstance(cf, (int, float)) and 0 < cf <= 1):
        problems.append("campaign.correction_factor must be 'auto' or a number in (0, 1]")
    if cfg.max_cycles < 0:
        problems.append("campaign.max_cycles must be non-negative")
    return problems


# --------------------------------------------------------------------------
# Config files
# --------------------------------------------------------------------------


def _pick(section: dict, name: str, default, alt: tuple[str, float] | None = None):
    if name in section:
        return section[name]
    if alt is not None and alt[0] in section:
        return float(section[alt[0]]) * alt[1]
    return default


def config_from_dict(data: dict) -> CampaignConfig:
    """Build a validated config, collecting every problem before raising."""
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"])
    known = {"trap", "noise", "coupling", "campaign"}
    for key in data:
        if key not in known:
            problems.append(f"unknown section {key!r}")
    t = data.get("trap") or {}
    n = data.get("noise") or {}
    c = data.get("coupling") or {}
    k = data.get("campaign") or {}
    two_pi = 2 * math.pi
    ref = TrapConfig.reference_trap()

    trap = None
    try:
        trap = TrapConfig(
            mass=float(_pick(t, "mass_kg", ref.mass, ("mass_amu", CONSTANTS.atomic_mass_unit))),
            nu_x=float(_pick(t, "nu_x", ref.nu_x, ("freq_x_hz", two_pi))),
            nu_y=float(_pick(t, "nu_y", ref.nu_y, ("freq_y_hz", two_pi))),
            nu_z=float(_pick(t, "nu_z", ref.nu_z, ("freq_z_hz", two_pi))),
            nbar_y=float(t.get("nbar_y", ref.nbar_y)),
            nbar_z=float(t.get("nbar_z", ref.nbar_z)),
        )
    except (ValueError, TypeError) as exc:
        problems.append(f"trap: {exc}")

    noise = None
    try:
        noise = NoiseModel(
            heating_rate=float(n.get("heating_rate", 10.0)),
            heating_mode=str(n.get("heating_mode", "uniform_jump")),
            detuning=float(_pick(n, "detuning", 0.0, ("detuning_hz", two_pi))),
            detuning_drift_sigma=float(
                _pick(n, "detuning_drift_sigma", two_pi * 0.5, ("detuning_drift_hz", two_pi))
            ),
            stark_phase=float(n.get("stark_phase", 0.0)),
            spam_error=float(n.get("spam_error", 0.0)),
            prep_n1_population=float(n.get("prep_n1_population", 0.01)),
        )
    except (ValueError, TypeError) as exc:
        problems.append(f"noise: {exc}")

    try:
        coupling = NonlinearCoupling(float(c.get("epsilon_gamma", 0.0)))
    except (ValueError, TypeError) as exc:
        problems.append(f"coupling: {exc}")
        coupling = None

    kwargs = {}
    for name, key, conv in (
        ("tau_main", "tau_main", float),
        ("control", "control", bool),
        ("shots_per_point", "shots_per_point", int),
        ("blocks", "blocks", int),
        ("master_seed", "master_seed", int),
        ("dead_time", "dead_time", float),
        ("theta_drift_fraction", "theta_drift_fraction", float),
        ("calibration_shots", "calibration_shots", int),
        ("truth_rate_method", "truth_rate_method", str),
        ("truth_transverse", "truth_transverse", str),
        ("max_cycles", "max_cycles", int),
    ):
        if key in k:
            try:
                kwargs[name] = conv(k[key])
            except (ValueError, TypeError):
                problems.append(f"campaign.{key} has invalid value {k[key]!r}")
    if "tau_main_ms" in k and "tau_main" not in k:
        kwargs["tau_main"] = float(k["tau_main_ms"]) * 1e-3
    if "theta_populations" in k:
        try:
            kwargs["theta_targets"] = tuple(float(x) for x in k["theta_populations"])
        except (ValueError, TypeError):
            problems.append("campaign.theta_populations must be a list of two numbers")
    if "correction_factor" in k:
        kwargs["correction_factor"] = k["correction_factor"]
    if "tau_control" in k and kwargs.get("control", True):
        expected = kwargs.get("tau_main", 0.015) / GOLDEN_RATIO
        if not math.isclose(float(k["tau_control"]), expected, rel_tol=1e-9):
            problems.append(f"campaign.tau_control must equal tau_main / golden ratio ({expected:.6g} s)")

    complete = trap is not None and noise is not None and coupling is not None
    try:
        cfg = CampaignConfig(
            trap=trap or ref,
            noise=noise or NoiseModel(),
            coupling=coupling or NonlinearCoupling(0.0),
            **kwargs,
        )
    except ConfigError as exc:
        raise ConfigError(problems + exc.problems) from None
    except TypeError as exc:
        raise ConfigError(problems + [str(exc)]) from None
    if problems or not complete:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> CampaignConfig:
    """Read a YAML campaign file. Unknown sections and every invalid field are reported together."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML parse error: {exc}"]) from None
    cfg = config_from_dict(data or {})
    log.info("loaded config %s; derived %s", path, cfg.derived())
    return cfg


def save_config(cfg: CampaignConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")


# --------------------------------------------------------------------------
# Shot storage
# --------------------------------------------------------------------------


@dataclass
class ShotTable:
    """Columnar store of shot records; one entry per shot, in acquisition order."""

    block: np.ndarray
    tau: np.ndarray
    label: np.ndarray  # index into THETA_LABELS
    xi_index: np.ndarray
    outcome: np.ndarray
    seed: np.ndarray
    jump_count: np.ndarray

    @classmethod
    def empty(cls) -> "ShotTable":
        return cls.concat([])

    @classmethod
    def concat(cls, tables: list["ShotTable"]) -> "ShotTable":
        cols = {}
        dtypes = dict(block=np.int64, tau=float, label=np.int8, xi_index=np.int8,
                      outcome=np.int8, seed=np.uint64, jump_count=np.int32)
        for name, dt in dtypes.items():
            parts = [getattr(t, name) for t in tables]
            cols[name] = np.concatenate(parts).astype(dt) if parts else np.zeros(0, dtype=dt)
        return cls(**cols)

    def __len__(self) -> int:
        return len(self.outcome)

    def records(self) -> Iterator[ShotRecord]:
        for i in range(len(self)):
            yield ShotRecord(
                tau=float(self.tau[i]),
                theta_label=THETA_LABELS[self.label[i]],
                xi_index=int(self.xi_index[i]),
                outcome=int(self.outcome[i]),
                seed=int(self.seed[i]),
                jump_count=int(self.jump_count[i]),
                block=int(self.block[i]),
            )

    @classmethod
    def from_records(cls, records) -> "ShotTable":
        recs = list(records)
        return cls(
            block=np.array([r.block for r in recs], dtype=np.int64),
            tau=np.array([r.tau for r in recs], dtype=float),
            label=np.array([THETA_LABELS.index(r.theta_label) for r in recs], dtype=np.int8),
            xi_index=np.array([r.xi_index for r in recs], dtype=np.int8),
            outcome=np.array([r.outcome for r in recs], dtype=np.int8),
            seed=np.array([r.seed for r in recs], dtype=np.uint64),
            jump_count=np.array([r.jump_count for r in recs], dtype=np.int32),
        )


@dataclass
class CampaignDataset:
    shots: ShotTable
    calibration_records: list[dict]
    config_snapshot: dict
    format_version: str = FORMAT_VERSION

    @property
    def shot_records(self) -> Iterator[ShotRecord]:
        return self.shots.records()


# --------------------------------------------------------------------------
# Running a campaign
# --------------------------------------------------------------------------


def _simulate_cell(sim: ShotSimulator, theta, xi, tau, seeds, detuning, stark_phase):
    outcomes = np.empty(len(seeds), dtype=np.int8)
    jumps = np.empty(len(seeds), dtype=np.int32)
    for i, s in enumerate(seeds):
        rec = sim.shot(theta, xi, tau, int(s), detuning, stark_phase)
        outcomes[i] = rec.outcome
        jumps[i] = rec.jump_count
    return outcomes, jumps


def _ramsey_run(sim, cfg, block, thetas, labels, xi1, tau, detuning, stark_phase, seeds, order_rng):
    """Shots for every (theta, xi) cell in a seeded random interleaving."""
    N = cfg.shots_per_point
    cells = [(ti, xi_i) for ti in range(len(thetas)) for xi_i in range(3)]
    cell_of_shot = np.repeat(np.arange(len(cells)), N)
    order = order_rng.permutation(len(cell_of_shot))
    cell_of_shot = cell_of_shot[order]
    outcomes = np.empty(len(cell_of_shot), dtype=np.int8)
    jumps = np.empty(len(cell_of_shot), dtype=np.int32)
    for c, (ti, xi_i) in enumerate(cells):
        idx = np.flatnonzero(cell_of_shot == c)
        o, j = _simulate_cell(sim, thetas[ti], xi1 + XI_OFFSETS[xi_i], tau, seeds[idx], detuning, stark_phase)
        outcomes[idx] = o
        jumps[idx] = j
    lab = np.array([THETA_LABELS.index(labels[cells[c][0]]) for c in cell_of_shot], dtype=np.int8)
    xi_idx = np.array([cells[c][1] + 1 for c in cell_of_shot], dtype=np.int8)
    table = ShotTable(
        block=np.full(len(cell_of_shot), block, dtype=np.int64),
        tau=np.full(len(cell_of_shot), tau),
        label=lab,
        xi_index=xi_idx,
        outcome=outcomes,
        seed=seeds.astype(np.uint64),
        jump_count=jumps,
    )
    return table


def _counts(table: ShotTable, label: str, tau: float) -> np.ndarray:
    sel = (table.label == THETA_LABELS.index(label)) & (table.tau == tau)
    return np.array([table.outcome[sel & (table.xi_index == k)].mean() for k in (1, 2, 3)])


def _block_environment(cfg: CampaignConfig) -> list[dict]:
    """Per-block drifts. The detuning is a random walk, so it is generated up front."""
    g = rngmod.generator(rngmod.derive_seed(cfg.master_seed, rngmod.STREAM_ENSEMBLE, 0))
    steps = g.standard_normal(cfg.blocks) * cfg.noise.detuning_drift_sigma
    detunings = cfg.noise.detuning + np.cumsum(steps)
    drifts = 1 + cfg.theta_drift_fraction * g.standard_normal((cfg.blocks, 3))
    return [
        {"detuning": float(detunings[b]), "theta_scale": [float(x) for x in drifts[b]]}
        for b in range(cfg.blocks)
    ]


def _calibrate_theta(theta_true, n_shots, spam, g):
    """Carrier-only excitation measurement; returns (counts, theta estimate)."""
    p = math.sin(theta_true / 2) ** 2
    p_meas = p * (1 - 2 * spam) + spam
    k = int(g.binomial(n_shots, p_meas))
    p_hat = ((k / n_shots) - spam) / (1 - 2 * spam)
    p_hat = min(max(p_hat, 0.0), 1.0)
    return k, 2 * math.asin(math.sqrt(p_hat))


def run_block(cfg: CampaignConfig, block: int, env: dict) -> tuple[ShotTable, dict]:
    sim = ShotSimulator(cfg.trap, cfg.coupling, cfg.noise, cfg.truth_rate_method, cfg.truth_transverse)
    g = rngmod.generator(rngmod.derive_seed(cfg.master_seed, rngmod.STREAM_BLOCK, block))
    th1, th2 = cfg.thetas
    scale = env["theta_scale"]
    true_thetas = (th1 * scale[0], th2 * scale[1], (math.pi / 2) * scale[2])
    detuning = env["detuning"]
    stark = cfg.noise.stark_phase
    record = {"block": block, "truth": {"theta": list(true_thetas), "detuning": detuning}}

    cal = []
    for th in true_thetas[:2]:
        k, th_hat = _calibrate_theta(th, cfg.calibration_shots, cfg.noise.spam_error, g)
        cal.append({"shots": cfg.calibration_shots, "excited": k, "theta_hat": th_hat})
    record["theta_calibration"] = cal

    runs = [(RUN_MAIN, cfg.tau_main)]
    if cfg.control:
        runs.append((RUN_CONTROL, cfg.tau_control))
    tables = []
    N = cfg.shots_per_point
    try:
        for run_id, (run, tau) in enumerate(runs):
            seeds = rngmod.derive_seeds(cfg.master_seed, 3 * N, rngmod.STREAM_SHOTS, block, 2 * run_id)
            prelim = _ramsey_run(sim, cfg, block, (true_thetas[2],), ("calibration",), 0.0, tau,
                                 detuning, stark, seeds, g)
            P = _counts(prelim, "calibration", tau)
            est = invert_three_point(RamseyTriple(*P, N=N, xi1=0.0, tau=tau))
            xi1 = optimal_bias(est.Phi)
            seeds = rngmod.derive_seeds(cfg.master_seed, 6 * N, rngmod.STREAM_SHOTS, block, 2 * run_id + 1)
            main = _ramsey_run(sim, cfg, block, true_thetas[:2], ("theta1", "theta2"), xi1, tau,
                               detuning, stark, seeds, g)
            record[run] = {"tau": tau, "xi1": xi1, "bias_phase": est.Phi}
            tables += [prelim, main]
    except (DegenerateContrastError, ArithmeticError, RuntimeError) as exc:
        log.warning("block %d aborted: %s", block, exc)
        record["aborted"] = str(exc)
    return ShotTable.concat(tables), record


def _run_block_star(args):
    return run_block(*args)


def run_campaign(cfg: CampaignConfig, threads: int = 1) -> CampaignDataset:
    """Simulate every block; the result depends only on the config (and its master seed)."""
    env = _block_environment(cfg)
    jobs = [(cfg, b, env[b]) for b in range(cfg.blocks)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_block_star, jobs))
    else:
        results = [run_block(*j) for j in jobs]
    tables = [r[0] for r in results]
    records = [r[1] for r in results]
    return CampaignDataset(ShotTable.concat(tables), records, cfg.to_dict())


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def save_dataset(ds: CampaignDataset, path) -> None:
    """Newline-delimited JSON: header, calibration records, then one line per shot."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"type": "header", "format_version": ds.format_version, "config": ds.config_snapshot}) + "\n")
        for rec in ds.calibration_records:
            fh.write(_dumps({"type": "calibration", **rec}) + "\n")
        for r in ds.shots.records():
            fh.write(_dumps({"type": "shot", **r.to_dict()}) + "\n")


def load_dataset(path) -> CampaignDataset:
    header = None
    cal, shots = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("type", None)
            if kind == "header":
                header = obj
            elif kind == "calibration":
                cal.append(obj)
            elif kind == "shot":
                shots.append(ShotRecord.from_dict(obj))
            else:
                raise ValueError(f"unknown record type {kind!r}")
    if header is None:
        raise ValueError("dataset has no header line")
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {header.get('format_version')!r}")
    return CampaignDataset(ShotTable.from_records(shots), cal, header["config"], header["format_version"])


def write_shot_csv(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(ShotRecord.CSV_COLUMNS) + "\n")
        for r in records:
            fh.write(f"{r.tau!r},{r.theta_label},{r.xi_index},{r.outcome},{r.seed},{r.jump_count}\n")


def write_shot_ndjson(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(_dumps(r.to_dict()) + "\n")


# --------------------------------------------------------------------------
# Analysis
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    tau: float
    delta_phi: float  # wrapped to (-pi, pi]
    sigma: float
    A: float
    B: float
    Phi1: float
    Phi2: float


@dataclass
class CampaignReport:
    blocks: list[dict]
    pooled: EpsilonEstimate | None
    fit: GaussianFit | None
    cycles: int
    cycle_residual: float
    sample_std: float
    mean_propagated_sigma: float
    uncertainty_ratio: float
    control: dict = field(default_factory=dict)
    excluded_blocks: list[int] = field(default_factory=list)
    correction_factor: float = 1.0

    def epsilons(self) -> np.ndarray:
        return np.array([b["epsilon"] for b in self.blocks])

    def to_dict(self) -> dict:
        fit = None
        if self.fit is not None:
            fit = {
                "mean": self.fit.mean,
                "sigma": self.fit.sigma,
                "sem": self.fit.sem,
                "n": self.fit.n,
                "degenerate": self.fit.degenerate,
                "hist_amplitude": self.fit.hist_amplitude,
                "hist_mean": self.fit.hist_mean,
                "hist_sigma": self.fit.hist_sigma,
            }
        pooled = None
        if self.pooled is not None:
            pooled = {"epsilon": self.pooled.value, "sigma_epsilon": self.pooled.sigma,
                      "delta_phi": self.pooled.delta_phi}
        mean_a = float(np.mean([b["A"] for b in self.blocks])) if self.blocks else float("nan")
        mean_b = float(np.mean([b["B"] for b in self.blocks])) if self.blocks else float("nan")
        return {
            "delta_phi": pooled["delta_phi"] if pooled else None,
            "sigma": float(np.mean([b["sigma_delta_phi"] for b in self.blocks]) / math.sqrt(len(self.blocks)))
            if self.blocks else None,
            "epsilon": pooled["epsilon"] if pooled else None,
            "sigma_epsilon": pooled["sigma_epsilon"] if pooled else None,
            "A": mean_a,
            "B": mean_b,
            "cycles": self.cycles,
            "cycle_residual": self.cycle_residual,
            "sample_std": self.sample_std,
            "mean_propagated_sigma": self.mean_propagated_sigma,
            "uncertainty_ratio": self.uncertainty_ratio,
            "correction_factor": self.correction_factor,
            "gaussian_fit": fit,
            "control": self.control,
            "excluded_blocks": self.excluded_blocks,
            "blocks": self.blocks,
        }


def _analyze_run(shots: ShotTable, block: int, tau: float, xi1: float, thetas, N: int) -> RunResult:
    sel = shots.block == block
    sub = ShotTable(*(getattr(shots, f)[sel] for f in ("block", "tau", "label", "xi_index", "outcome", "seed", "jump_count")))
    ests = []
    for label, th in zip(("theta1", "theta2"), thetas):
        P = _counts(sub, label, tau)
        ests.append(invert_three_point(RamseyTriple(*P, N=N, xi1=xi1, tau=tau, theta=th)))
    dphi, sig = differential_phase_estimate(*ests)
    return RunResult(tau, dphi, sig, 0.5 * (ests[0].A + ests[1].A), 0.5 * (ests[0].B + ests[1].B),
                     ests[0].Phi, ests[1].Phi)


def _center_sem(runs: list[RunResult], center: float) -> float:
    """Standard error of a pooled wrapped phase; propagated when there is a single block."""
    if len(runs) < 2:
        return runs[0].sigma
    vals = wrap_phase(np.array([r.delta_phi for r in runs]) - center)
    return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def _unwrap_about(values, center):
    return center + wrap_phase(np.asarray(values) - center)


def _conversion_rel_sigma(calibration: list[dict], spam: float) -> float:
    """Relative uncertainty of the phase-to-epsilon factor from the binomial theta calibrations.

    The factor is proportional to the population difference p1 - p2.
    """
    pops, var = [], []
    for c in calibration:
        n = c["shots"]
        f = c["excited"] / n
        pops.append(math.sin(c["theta_hat"] / 2) ** 2)
        var.append(f * (1 - f) / n / (1 - 2 * spam) ** 2)
    diff = abs(pops[0] - pops[1])
    return math.sqrt(sum(var)) / diff if diff > 0 else float("inf")


def analyze_dataset(ds: CampaignDataset) -> CampaignReport:
    """Per-block differential phases, cycle resolution with the control run, epsilon statistics."""
    if ds.format_version != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {ds.format_version!r}")
    cfg = config_from_dict(ds.config_snapshot)
    cf = cfg.resolved_correction_factor()
    N = cfg.shots_per_point
    shots = ds.shots

    good, excluded = [], []
    for rec in ds.calibration_records:
        b = rec["block"]
        if "aborted" in rec or RUN_MAIN not in rec:
            excluded.append(b)
            continue
        thetas = [c["theta_hat"] for c in rec["theta_calibration"]]
        try:
            main = _analyze_run(shots, b, rec[RUN_MAIN]["tau"], rec[RUN_MAIN]["xi1"], thetas, N)
            ctrl = None
            if RUN_CONTROL in rec:
                ctrl = _analyze_run(shots, b, rec[RUN_CONTROL]["tau"], rec[RUN_CONTROL]["xi1"], thetas, N)
        except DegenerateContrastError as exc:
            log.warning("block %d excluded: %s", b, exc)
            excluded.append(b)
            continue
        good.append((b, thetas, main, ctrl))
    if not good:
        raise ValueError("no complete blocks to analyze")

    calibrations = {rec["block"]: rec["theta_calibration"] for rec in ds.calibration_records}
    center_main = circular_mean([g[2].delta_phi for g in good])
    cycles, resid = 0, float("nan")
    control_summary = {}
    have_control = all(g[3] is not None for g in good)
    if have_control:
        center_ctrl = circular_mean([g[3].delta_phi for g in good])
        ratio = cfg.tau_control / cfg.tau_main
        sigma_resid = math.hypot(ratio * _center_sem([g[2] for g in good], center_main),
                                 _center_sem([g[3] for g in good], center_ctrl))
        search = cycle_search_limit(sigma_resid, ratio, cfg.max_cycles)
        if search < cfg.max_cycles:
            log.warning("cycle search limited to +-%d by control-phase noise %.3g rad", search, sigma_resid)
        cycles, resid = resolve_cycles(center_main, center_ctrl, cfg.tau_main, cfg.tau_control, search)
        ctrl_vals = _unwrap_about([g[3].delta_phi for g in good], center_ctrl)
        ctrl_sig = np.array([g[3].sigma for g in good])
        control_summary = {
            "tau": cfg.tau_control,
            "delta_phi_mean": float(np.mean(ctrl_vals)),
            "delta_phi_sem": float(np.std(ctrl_vals, ddof=1) / math.sqrt(len(ctrl_vals))) if len(ctrl_vals) > 1
            else float(ctrl_sig[0]),
            "mean_sigma": float(np.mean(ctrl_sig)),
            "cycle_search_limit": search,
            "residual_sigma": sigma_resid,
        }
        control_summary["significance"] = abs(control_summary["delta_phi_mean"]) / control_summary["delta_phi_sem"]

    main_vals = _unwrap_about([g[2].delta_phi for g in good], center_main) + 2 * math.pi * cycles
    blocks = []
    estimates = []
    for (b, thetas, main, ctrl), dphi in zip(good, main_vals):
        qpn = epsilon_from_delta_phase(float(dphi), main.sigma, thetas[0], thetas[1], cfg.tau_main, cfg.trap, cf,
                                       metadata={"block": b})
        cal_rel = _conversion_rel_sigma(calibrations[b], cfg.noise.spam_error)
        est = replace(qpn, sigma=math.hypot(qpn.sigma, abs(qpn.value) * cal_rel))
        estimates.append(est)
        row = {
            "block": b,
            "tau_s": cfg.tau_main,
            "delta_phi": float(dphi),
            "delta_phi_wrapped": main.delta_phi,
            "sigma_delta_phi": main.sigma,
            "epsilon": est.value,
            "sigma_epsilon": est.sigma,
            "sigma_epsilon_qpn": qpn.sigma,
            "A": main.A,
            "B": main.B,
            "frequency_hz": 0.5 * (main.Phi1 + main.Phi2) / (2 * math.pi * cfg.tau_main),
        }
        if ctrl is not None:
            row.update({
                "control_delta_phi": ctrl.delta_phi,
                "control_sigma_delta_phi": ctrl.sigma,
                "control_A": ctrl.A,
                "control_B": ctrl.B,
            })
        blocks.append(row)

    values = np.array([e.value for e in estimates])
    sigmas = np.array([e.sigma for e in estimates])
    if len(values) >= 2:
        fit = fit_gaussian(values)
        sample_std = float(np.std(values, ddof=1))
        pooled_sigma = fit.sem if not fit.degenerate else float(np.mean(sigmas) / math.sqrt(len(values)))
    else:
        fit = None
        sample_std = float("nan")
        pooled_sigma = float(sigmas[0])
    mean_sigma = float(np.mean(sigmas))
    pooled = EpsilonEstimate(
        value=float(np.mean(values)),
        sigma=pooled_sigma,
        delta_phi=float(np.mean(main_vals)),
        correction_factor=cf,
        metadata={"tau": cfg.tau_main, "blocks": len(values), "theta_targets": list(cfg.theta_targets)},
    )
    return CampaignReport(
        blocks=blocks,
        pooled=pooled,
        fit=fit,
        cycles=cycles,
        cycle_residual=resid,
        sample_std=sample_std,
        mean_propagated_sigma=mean_sigma,
        uncertainty_ratio=mean_sigma / sample_std if sample_std and math.isfinite(sample_std) else float("nan"),
        control=control_summary,
        excluded_blocks=excluded,
        correction_factor=cf,
    )


# --------------------------------------------------------------------------
# Plot data
# --------------------------------------------------------------------------

PLOT_COLUMNS = {
    "contrast_envelope": ("tau_s", "A_mean", "A_stderr", "A_predicted_zero_jump"),
    "tau_scan": ("heating_rate", "tau_s", "normalized_std_epsilon", "normalized_std_phase_rad", "contrast"),
    "epsilon_histogram": ("bin_center", "count", "gaussian_fit_value"),
    "block_series": ("block", "delta_phi", "sigma_delta_phi", "epsilon", "sigma_epsilon", "A", "B", "frequency_hz"),
}
FIGURE_IDS = tuple(PLOT_COLUMNS)


def _plot_rows(source, figure_id):
    if figure_id == "contrast_envelope":
        return [(p.tau, p.A, p.A_stderr, p.A_predicted_zero_jump) for p in source]
    if figure_id == "tau_scan":
        pts = sorted(source, key=lambda p: (p.heating_rate, p.tau))
        return [(p.heating_rate, p.tau, p.normalized_std_epsilon, p.normalized_std_phase, p.contrast) for p in pts]
    if isinstance(source, CampaignDataset):
        source = analyze_dataset(source)
    if not isinstance(source, CampaignReport):
        raise TypeError(f"{figure_id} needs a campaign report or dataset")
    if figure_id == "epsilon_histogram":
        fit = source.fit
        if fit is None or fit.degenerate:
            raise ValueError("epsilon histogram needs at least two distinct block estimates")
        return [(c, int(n), float(fit.curve(c))) for c, n in zip(fit.bin_centers, fit.counts)]
    return [tuple(b[k] for k in PLOT_COLUMNS["block_series"]) for b in source.blocks]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def emit_plot_data(source, figure_id: str, out_dir) -> Path:
    """Write `<figure_id>.csv` into `out_dir` and return its path.

    Sources: a list of EnvelopePoint (contrast_envelope), a list of ScanPoint
    (tau_scan), or a CampaignReport / CampaignDataset (epsilon_histogram,
    block_series).
    """
    if figure_id not in PLOT_COLUMNS:
        raise ValueError(f"unknown figure id {figure_id!r}; valid ids: {', '.join(FIGURE_IDS)}")
    rows = _plot_rows(source, figure_id)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{figure_id}.csv"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(PLOT_COLUMNS[figure_id]) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path
