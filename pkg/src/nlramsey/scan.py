"""Interrogation-time scans of the differential-phase sensitivity.

For each tau and heating rate the exact trajectory-averaged populations are
computed once, then repeated experiments are drawn as binomial counts. The same
uniforms drive the counts for every heating rate, so curves at different rates
differ only through the physics, not through independent sampling noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng as rngmod
from .estimator import (
    DegenerateContrastError,
    RamseyTriple,
    invert_three_point,
    optimal_bias,
    phase_per_epsilon,
    tau_scan_statistics,
    wrap_phase,
)
from .nonlinear import CLOSED_FORM, NonlinearCoupling
from .oscillator import TrapConfig
from .simulator import NoiseModel, ShotSimulator

DEFAULT_TAU_GRID = (0.005, 0.01, 0.015, 0.025, 0.04, 0.06, 0.08, 0.1, 0.13)
DEFAULT_RATES = (7.0, 10.0, 13.0)


@dataclass(frozen=True)
class ScanPoint:
    heating_rate: float
    tau: float
    normalized_std_epsilon: float  # sample std of epsilon estimates x sqrt(wall time / 1 s)
    normalized_std_phase: float  # same for the raw differential phase, rad
    contrast: float
    valid_repetitions: int


def wall_time_per_estimate(tau: float, shots_per_point: int, dead_time: float = 0.0) -> float:
    """Both theta settings, three readout phases, N shots each."""
    return 6 * shots_per_point * (tau + dead_time)


def simulate_tau_scan(
    trap: TrapConfig,
    noise: NoiseModel,
    tau_grid=DEFAULT_TAU_GRID,
    heating_rates=DEFAULT_RATES,
    theta_targets=(0.2, 0.8),
    shots_per_point: int = 200,
    repetitions: int = 2000,
    trajectories: int = 2000,
    dead_time: float = 0.0,
    master_seed: int = 7,
    coupling: NonlinearCoupling | None = None,
    rate_method: str = CLOSED_FORM,
) -> list[ScanPoint]:
    """Normalized differential-phase noise versus tau for each heating rate.

    Only projection noise and heating enter; detuning and Stark phases are
    common mode and are left at the values in `noise`.
    """
    coupling = coupling or NonlinearCoupling(0.0)
    thetas = [2 * math.asin(math.sqrt(p)) for p in theta_targets]
    N = shots_per_point
    out = []
    for ti, tau in enumerate(tau_grid):
        g = rngmod.generator(rngmod.derive_seed(master_seed, rngmod.STREAM_ENSEMBLE, ti))
        uniforms = g.random((repetitions, 2, 3))
        traj_seed = rngmod.derive_seed(master_seed, rngmod.STREAM_TRAJECTORIES, ti)
        conv = phase_per_epsilon(thetas[0], thetas[1], tau, trap)
        for rate in heating_rates:
            sim = ShotSimulator(trap, coupling, NoiseModel(**{**noise.to_dict(), "heating_rate": rate}), rate_method)
            pbar = []
            contrast = []
            for th in thetas:
                # bias from the noiseless phase, as a converged preliminary run would give
                amps0 = sim.mean_excitation(th, [0.0, math.pi / 2, math.pi], tau, trajectories=0)
                est0 = invert_three_point(RamseyTriple(*np.clip(amps0, 0, 1), N=N))
                xi1 = optimal_bias(est0.Phi)
                xis = xi1 + np.array([0.0, math.pi / 2, math.pi])
                p = sim.mean_excitation(th, xis, tau, trajectories=trajectories, seed=traj_seed)
                pbar.append((np.clip(p, 0.0, 1.0), xi1))
                contrast.append(math.hypot(p[2] - p[0], 2 * p[1] - p[0] - p[2]))
            counts = [stats.binom.ppf(uniforms[:, j, :], N, pbar[j][0][None, :]) / N for j in range(2)]
            dphis = []
            for r in range(repetitions):
                try:
                    e1 = invert_three_point(RamseyTriple(*counts[0][r], N=N, xi1=pbar[0][1], tau=tau))
                    e2 = invert_three_point(RamseyTriple(*counts[1][r], N=N, xi1=pbar[1][1], tau=tau))
                except DegenerateContrastError:
                    continue
                dphis.append(wrap_phase(e1.Phi - e2.Phi))
            dphis = np.asarray(dphis)
            wall = wall_time_per_estimate(tau, N, dead_time)
            if dphis.size < 2:
                out.append(ScanPoint(rate, tau, float("nan"), float("nan"), float(np.mean(contrast)), int(dphis.size)))
                continue
            (_, s_phi), = tau_scan_statistics({tau: dphis}, wall)
            (_, s_eps), = tau_scan_statistics({tau: dphis / conv}, wall)
            out.append(ScanPoint(rate, tau, abs(s_eps), s_phi, float(np.mean(contrast)), int(dphis.size)))
    return out


def curves(points: list[ScanPoint], field: str = "normalized_std_epsilon") -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """{heating_rate: (taus, values)} sorted by tau."""
    res = {}
    for rate in sorted({p.heating_rate for p in points}):
        sel = sorted((p for p in points if p.heating_rate == rate), key=lambda p: p.tau)
        res[rate] = (np.array([p.tau for p in sel]), np.array([getattr(p, field) for p in sel]))
    return res


def interior_minimum(taus, values) -> float | None:
    """tau of the minimum if it is not at either end of the grid."""
    i = int(np.nanargmin(values))
    return float(taus[i]) if 0 < i < len(values) - 1 else None
