"""Pulse-sequence simulation on a spin (S, D) x truncated Fock ladder state.

The sequence for one shot is

    |S, 0> -- carrier(theta) -- BSB(pi) -- free evolution(tau) -- BSB(pi) -- carrier(pi/2, xi) -- measure

Pulses are instantaneous rotations. Heating during free evolution is sampled
as a quantum-jump trajectory; there are no density matrices anywhere.
Spin index 0 is |S>, index 1 is |D>.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .nonlinear import CLOSED_FORM, NonlinearCoupling, rate_coefficients
from .oscillator import DEFAULT_FOCK_CUTOFF, TrapConfig
from .rng import STREAM_TRAJECTORIES, derive_seeds, generator

S, D = 0, 1
NORM_TOL = 1e-9
LEAKAGE_TOL = 1e-9
SPAN_TOL = 1e-12
HEATING_MODES = ("uniform_jump", "occupation_scaled")


class TruncationError(RuntimeError):
    """Population would leave the truncated Fock ladder."""


@dataclass
class SpinPhononState:
    amplitudes: np.ndarray
    frame_time: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 2 or self.amplitudes.shape[0] != 2:
            raise ValueError("amplitudes must have shape (2, nmax + 1)")
        norm = np.sqrt(np.sum(np.abs(self.amplitudes) ** 2))
        if abs(norm - 1) > NORM_TOL:
            raise ValueError(f"state norm {norm:.12g} differs from 1 by more than {NORM_TOL:g}")

    @classmethod
    def basis(cls, spin: int, n: int = 0, nmax: int = DEFAULT_FOCK_CUTOFF) -> "SpinPhononState":
        if not 0 <= n <= nmax:
            raise ValueError(f"Fock level {n} outside 0..{nmax}")
        amps = np.zeros((2, nmax + 1), dtype=complex)
        amps[spin, n] = 1.0
        return cls(amps)

    @property
    def nmax(self) -> int:
        return self.amplitudes.shape[1] - 1

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def excited_population(self) -> float:
        """P(D), summed over the Fock ladder."""
        return float(np.sum(np.abs(self.amplitudes[D]) ** 2))

    def fock_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)


@dataclass(frozen=True)
class PulseSpec:
    kind: str
    angle: float
    phase: float = 0.0
    detuning: float = 0.0
    stark_phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("carrier", "blue_sideband"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.angle < 0:
            raise ValueError("pulse angle must be non-negative")

    def apply(self, state: SpinPhononState, rabi_frequency: float | None = None) -> SpinPhononState:
        if self.kind == "carrier":
            return apply_carrier(state, self.angle, self.phase)
        return apply_blue_sideband(
            state, self.angle, self.phase, self.detuning, self.stark_phase, rabi_frequency
        )


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic and systematic imperfections of one experimental setting.

    `prep_n1_population` is the probability that ground-state cooling leaves
    the ion in |S, 1> instead of |S, 0>.
    """

    heating_rate: float = 0.0
    heating_mode: str = "uniform_jump"
    detuning_drift_sigma: float = 0.0
    spam_error: float = 0.0
    shots_per_point: int = 200
    detuning: float = 0.0
    stark_phase: float = 0.0
    prep_n1_population: float = 0.01

    def __post_init__(self):
        if self.heating_rate < 0:
            raise ValueError("heating_rate must be non-negative")
        if self.heating_mode not in HEATING_MODES:
            raise ValueError(f"heating_mode must be one of {HEATING_MODES}")
        if not 0 <= self.spam_error < 0.5:
            raise ValueError("spam_error must lie in [0, 0.5)")
        if self.shots_per_point < 1:
            raise ValueError("shots_per_point must be >= 1")
        if self.detuning_drift_sigma < 0:
            raise ValueError("detuning_drift_sigma must be non-negative")
        if not 0 <= self.prep_n1_population < 1:
            raise ValueError("prep_n1_population must lie in [0, 1)")

    @classmethod
    def noiseless(cls, **overrides) -> "NoiseModel":
        base = dict(prep_n1_population=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "heating_rate": self.heating_rate,
            "heating_mode": self.heating_mode,
            "detuning_drift_sigma": self.detuning_drift_sigma,
            "spam_error": self.spam_error,
            "shots_per_point": self.shots_per_point,
            "detuning": self.detuning,
            "stark_phase": self.stark_phase,
            "prep_n1_population": self.prep_n1_population,
        }


@dataclass(frozen=True)
class ShotRecord:
    tau: float
    theta_label: str
    xi_index: int
    outcome: int
    seed: int
    jump_count: int = 0
    block: int = 0

    CSV_COLUMNS = ("tau_s", "theta_label", "xi_index", "outcome", "seed", "jump_count")

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")
        if self.theta_label not in ("theta1", "theta2", "calibration"):
            raise ValueError(f"unknown theta label {self.theta_label!r}")
        if self.xi_index not in (1, 2, 3):
            raise ValueError("xi_index must be 1, 2 or 3")

    def to_dict(self) -> dict:
        return {
            "block": self.block,
            "tau_s": self.tau,
            "theta_label": self.theta_label,
            "xi_index": self.xi_index,
            "outcome": self.outcome,
            "seed": self.seed,
            "jump_count": self.jump_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShotRecord":
        return cls(
            tau=float(d["tau_s"]),
            theta_label=d["theta_label"],
            xi_index=int(d["xi_index"]),
            outcome=int(d["outcome"]),
            seed=int(d["seed"]),
            jump_count=int(d.get("jump_count", 0)),
            block=int(d.get("block", 0)),
        )


@dataclass(frozen=True)
class SecularRateModel:
    """rate = c0 * w0 + c1 * w1 for motional weights w0, w1 of |0> and |1>."""

    c0: float = 0.0
    c1: float = 0.0

    @classmethod
    def build(
        cls,
        trap: TrapConfig,
        coupling: NonlinearCoupling,
        method: str = CLOSED_FORM,
        transverse: str = "ground",
    ) -> "SecularRateModel":
        if coupling.epsilon_gamma == 0:
            return cls()
        return cls(*rate_coefficients(trap, coupling, method, transverse))

    def rate(self, w0: float, w1: float) -> float:
        return self.c0 * w0 + self.c1 * w1


# --------------------------------------------------------------------------
# Pulses
# --------------------------------------------------------------------------


def _rotation(angle, phase):
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return c, -1j * np.exp(-1j * phase) * s, -1j * np.exp(1j * phase) * s


def apply_carrier(state: SpinPhononState, angle: float, phase: float = 0.0) -> SpinPhononState:
    """Spin rotation by `angle` about cos(phase) X + sin(phase) Y on every Fock level."""
    c, sd, ds = _rotation(angle, phase)
    a = state.amplitudes
    out = np.empty_like(a)
    out[S] = c * a[S] + sd * a[D]
    out[D] = ds * a[S] + c * a[D]
    return SpinPhononState(out, state.frame_time)


def apply_blue_sideband(
    state: SpinPhononState,
    angle: float,
    phase: float = 0.0,
    detuning: float = 0.0,
    stark_phase: float = 0.0,
    rabi_frequency: float | None = None,
) -> SpinPhononState:
    """Rotate each pair (|S, n>, |D, n+1>) by angle * sqrt(n + 1).

    `angle` is calibrated on the n = 0 pair. |D, 0> has no partner and only
    picks up exp(-i stark_phase), which advances the motional relative phase
    by `stark_phase`. A non-zero `detuning` needs `rabi_frequency` (rad/s) to
    fix the pulse duration.
    """
    a = state.amplitudes
    nmax = state.nmax
    if abs(a[S, nmax]) ** 2 > LEAKAGE_TOL:
        raise TruncationError(f"|S, {nmax}> populated; sideband would leave the Fock ladder")
    out = a.copy()
    root = np.sqrt(np.arange(1, nmax + 1))
    s_amp, d_amp = a[S, :-1], a[D, 1:]
    if detuning == 0.0:
        c, sd, ds = _rotation(angle * root, phase)
        out[S, :-1] = c * s_amp + sd * d_amp
        out[D, 1:] = ds * s_amp + c * d_amp
    else:
        if not rabi_frequency:
            raise ValueError("detuned sideband pulse needs rabi_frequency")
        duration = angle / rabi_frequency
        omega = rabi_frequency * root
        gen = np.sqrt(omega**2 + detuning**2)
        c = np.cos(gen * duration / 2)
        s = np.sin(gen * duration / 2) / gen
        u_ss = c - 1j * detuning * s
        u_dd = c + 1j * detuning * s
        u_sd = -1j * omega * np.exp(-1j * phase) * s
        u_ds = -1j * omega * np.exp(1j * phase) * s
        out[S, :-1] = u_ss * s_amp + u_sd * d_amp
        out[D, 1:] = u_ds * s_amp + u_dd * d_amp
    if stark_phase:
        out[D, 0] *= np.exp(-1j * stark_phase)
    return SpinPhononState(out, state.frame_time)


# --------------------------------------------------------------------------
# Free evolution with heating
# --------------------------------------------------------------------------


def _coherent_phase(amps, dt, rate_model, detuning):
    """Detuning phase n * detuning * dt on level n, plus the non-linear phase on |1>.

    The non-linear phase only acts while the motion lies in span{|0>, |1>}.
    """
    n = np.arange(amps.shape[1])
    phase = detuning * dt * n
    if rate_model is not None and (rate_model.c0 or rate_model.c1):
        pops = np.sum(np.abs(amps) ** 2, axis=0)
        if pops[2:].sum() <= SPAN_TOL:
            phase = phase.astype(float)
            phase[1] += rate_model.rate(pops[0], pops[1]) * dt
    return amps * np.exp(1j * phase)[None, :]


def _raise(amps):
    if np.sum(np.abs(amps[:, -1]) ** 2) > LEAKAGE_TOL:
        raise TruncationError("heating jump would leave the Fock ladder")
    out = np.zeros_like(amps)
    out[:, 1:] = amps[:, :-1] * np.sqrt(np.arange(1, amps.shape[1]))[None, :]
    return out / np.sqrt(np.sum(np.abs(out) ** 2))


def _lower(amps):
    out = np.zeros_like(amps)
    out[:, :-1] = amps[:, 1:] * np.sqrt(np.arange(1, amps.shape[1]))[None, :]
    return out / np.sqrt(np.sum(np.abs(out) ** 2))


def evolve_with_jumps(amps, tau, jump_times, rate_model=None, detuning=0.0):
    """Deterministic free evolution with raising jumps at the given times (uniform_jump)."""
    t = 0.0
    for tj in jump_times:
        amps = _coherent_phase(amps, tj - t, rate_model, detuning)
        amps = _raise(amps)
        t = tj
    return _coherent_phase(amps, tau - t, rate_model, detuning)


def _evolve_occupation_scaled(amps, tau, ndot, rng, rate_model, detuning):
    """Trajectory for an infinite-temperature bath: up rate ndot (n+1), down rate ndot n.

    Between jumps the no-jump evolution damps level n by exp(-ndot (2n+1) t / 2);
    waiting times follow from the decaying norm.
    """
    n = np.arange(amps.shape[1])
    gamma = ndot * (2 * n + 1)
    jumps = 0
    t = 0.0
    while True:
        r = rng.random()
        pops = np.sum(np.abs(amps) ** 2, axis=0)
        remaining = tau - t

        def survival(dt):
            return float(pops @ np.exp(-gamma * dt)) - r

        if ndot == 0 or survival(remaining) > 0:
            amps = _coherent_phase(amps, remaining, rate_model, detuning)
            amps = amps * np.exp(-gamma * remaining / 2)[None, :]
            return amps / np.sqrt(np.sum(np.abs(amps) ** 2)), jumps
        dt = optimize.brentq(survival, 0.0, remaining, xtol=1e-15, rtol=1e-12)
        amps = _coherent_phase(amps, dt, rate_model, detuning)
        amps = amps * np.exp(-gamma * dt / 2)[None, :]
        amps = amps / np.sqrt(np.sum(np.abs(amps) ** 2))
        pops = np.sum(np.abs(amps) ** 2, axis=0)
        up = float(pops @ (n + 1))
        down = float(pops @ n)
        if rng.random() * (up + down) < up:
            amps = _raise(amps)
        else:
            amps = _lower(amps)
        jumps += 1
        t += dt


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return generator(0 if rng is None else rng)


def sample_jump_times(tau: float, ndot: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson jump times on [0, tau] at constant rate `ndot`."""
    k = rng.poisson(ndot * tau) if ndot > 0 and tau > 0 else 0
    return np.sort(rng.uniform(0.0, tau, size=k))


def free_evolve(
    state: SpinPhononState,
    tau: float,
    rate_model: SecularRateModel | None,
    noise: NoiseModel,
    detuning: float = 0.0,
    rng=None,
) -> tuple[SpinPhononState, int]:
    """Free evolution for `tau`; returns the new state and the number of heating jumps."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    gen = _as_generator(rng)
    amps = state.amplitudes
    if noise.heating_mode == "uniform_jump":
        times = sample_jump_times(tau, noise.heating_rate, gen)
        amps = evolve_with_jumps(amps, tau, times, rate_model, detuning)
        jumps = len(times)
    else:
        amps, jumps = _evolve_occupation_scaled(amps, tau, noise.heating_rate, gen, rate_model, detuning)
    return SpinPhononState(amps, state.frame_time + tau), jumps


def measure_shelving(state: SpinPhononState, noise: NoiseModel, rng=None) -> int:
    """Projective S/D readout, 1 for D, followed by a symmetric SPAM flip."""
    gen = _as_generator(rng)
    bit = int(gen.random() < state.excited_population())
    if gen.random() < noise.spam_error:
        bit ^= 1
    return bit


# --------------------------------------------------------------------------
# Full sequence
# --------------------------------------------------------------------------


def _readout_populations(amps, xis) -> np.ndarray:
    """P(D) after a final carrier pi/2 pulse with each phase in `xis`."""
    xis = np.atleast_1d(np.asarray(xis, dtype=float))
    c, s = math.cos(math.pi / 4), math.sin(math.pi / 4)
    d_final = c * amps[D][None, :] - 1j * np.exp(1j * xis)[:, None] * s * amps[S][None, :]
    return np.sum(np.abs(d_final) ** 2, axis=1)


class ShotSimulator:
    """Runs single shots of the Ramsey sequence for one trap / coupling / noise setting.

    The zero-jump branch is deterministic for given pulse parameters, so its
    final excitation probability is memoised; only trajectories with heating
    jumps are propagated individually.
    """

    def __init__(
        self,
        trap: TrapConfig,
        coupling: NonlinearCoupling,
        noise: NoiseModel,
        rate_method: str = CLOSED_FORM,
        transverse: str = "ground",
        nmax: int = DEFAULT_FOCK_CUTOFF,
    ):
        self.trap = trap
        self.coupling = coupling
        self.noise = noise
        self.nmax = nmax
        self.rate_model = SecularRateModel.build(trap, coupling, rate_method, transverse)
        self._cache: dict = {}

    def prepare(self, theta: float, n_init: int = 0, stark_phase: float = 0.0) -> SpinPhononState:
        state = SpinPhononState.basis(S, n_init, self.nmax)
        state = apply_carrier(state, theta, 0.0)
        return apply_blue_sideband(state, math.pi, 0.0, stark_phase=stark_phase)

    def pre_readout(self, theta, tau, detuning, stark_phase, n_init=0, jump_times=()) -> np.ndarray:
        """Amplitudes just before the final carrier pulse."""
        state = self.prepare(theta, n_init, stark_phase)
        amps = evolve_with_jumps(state.amplitudes, tau, jump_times, self.rate_model, detuning)
        return apply_blue_sideband(SpinPhononState(amps), math.pi, 0.0).amplitudes

    def excitation_probability(
        self, theta, xi, tau, detuning=None, stark_phase=None, n_init=0, jump_times=()
    ) -> float:
        """P(D) for a fixed heating realization (uniform_jump jump times)."""
        detuning = self.noise.detuning if detuning is None else detuning
        stark_phase = self.noise.stark_phase if stark_phase is None else stark_phase
        if len(jump_times) == 0:
            key = (theta, xi, tau, detuning, stark_phase, n_init)
            p = self._cache.get(key)
            if p is None:
                amps = self.pre_readout(theta, tau, detuning, stark_phase, n_init)
                p = float(_readout_populations(amps, [xi])[0])
                self._cache[key] = p
            return p
        amps = self.pre_readout(theta, tau, detuning, stark_phase, n_init, jump_times)
        return float(_readout_populations(amps, [xi])[0])

    def shot(
        self,
        theta: float,
        xi: float,
        tau: float,
        seed: int,
        detuning: float | None = None,
        stark_phase: float | None = None,
        theta_label: str = "theta1",
        xi_index: int = 1,
        block: int = 0,
    ) -> ShotRecord:
        noise = self.noise
        detuning = noise.detuning if detuning is None else detuning
        stark_phase = noise.stark_phase if stark_phase is None else stark_phase
        rng = generator(seed)
        n_init = 1 if rng.random() < noise.prep_n1_population else 0
        if noise.heating_mode == "uniform_jump":
            times = sample_jump_times(tau, noise.heating_rate, rng)
            p = self.excitation_probability(theta, xi, tau, detuning, stark_phase, n_init, times)
            jumps = len(times)
        else:
            state = self.prepare(theta, n_init, stark_phase)
            state, jumps = free_evolve(state, tau, self.rate_model, noise, detuning, rng)
            amps = apply_blue_sideband(state, math.pi, 0.0).amplitudes
            p = float(_readout_populations(amps, [xi])[0])
        bit = int(rng.random() < p)
        if rng.random() < noise.spam_error:
            bit ^= 1
        return ShotRecord(tau, theta_label, xi_index, bit, int(seed), jumps, block)

    def mean_excitation(
        self, theta, xis, tau, detuning=None, stark_phase=None, trajectories=2000, seed=0
    ) -> np.ndarray:
        """Trajectory-averaged P(D) at each readout phase in `xis` (uniform_jump).

        The zero-jump and initial-state mixture weights are exact; only the
        conditional average over trajectories with at least one jump is sampled.
        """
        if self.noise.heating_mode != "uniform_jump":
            raise NotImplementedError("ensemble averaging implemented for uniform_jump only")
        detuning = self.noise.detuning if detuning is None else detuning
        stark_phase = self.noise.stark_phase if stark_phase is None else stark_phase
        xis = np.asarray(xis, dtype=float)
        lam = self.noise.heating_rate * tau
        p_zero = math.exp(-lam)
        rng = generator(seed)
        total = np.zeros(len(xis))
        for n_init, w_init in ((0, 1 - self.noise.prep_n1_population), (1, self.noise.prep_n1_population)):
            if w_init == 0:
                continue
            amps = self.pre_readout(theta, tau, detuning, stark_phase, n_init)
            mean = p_zero * _readout_populations(amps, xis)
            if lam > 0 and trajectories > 0:
                acc = np.zeros(len(xis))
                for _ in range(trajectories):
                    k = 0
                    while k == 0:
                        k = rng.poisson(lam)
                    times = np.sort(rng.uniform(0.0, tau, size=k))
                    amps = self.pre_readout(theta, tau, detuning, stark_phase, n_init, times)
                    acc += _readout_populations(amps, xis)
                mean = mean + (1 - p_zero) * acc / trajectories
            total += w_init * mean
        s = self.noise.spam_error
        return total * (1 - 2 * s) + s


def run_shot(
    theta: float,
    xi: float,
    tau: float,
    trap: TrapConfig,
    coupling: NonlinearCoupling,
    noise: NoiseModel,
    rng_seed: int,
    **kwargs,
) -> ShotRecord:
    """Simulate one experimental shot; see `ShotSimulator.shot` for keyword options."""
    sim_kwargs = {k: kwargs.pop(k) for k in ("rate_method", "transverse", "nmax") if k in kwargs}
    return ShotSimulator(trap, coupling, noise, **sim_kwargs).shot(theta, xi, tau, rng_seed, **kwargs)


def ramsey_probability(
    theta: float,
    xi: float,
    tau: float,
    trap: TrapConfig,
    coupling: NonlinearCoupling,
    detuning: float = 0.0,
    stark_phase: float = 0.0,
    rate_method: str = CLOSED_FORM,
) -> float:
    """Noiseless P(D) at amplitude level (no heating, perfect preparation)."""
    sim = ShotSimulator(trap, coupling, NoiseModel.noiseless(), rate_method)
    return sim.excitation_probability(theta, xi, tau, detuning, stark_phase)


def fit_ramsey_fringe(xis, populations) -> tuple[float, float, float]:
    """Least-squares (Phi, A, B) for P = B - (A/2) cos(Phi + xi)."""
    xis = np.asarray(xis, dtype=float)
    p = np.asarray(populations, dtype=float)
    # P = B + a cos(xi) + b sin(xi), a = -(A/2) cos Phi, b = (A/2) sin Phi
    M = np.column_stack([np.ones_like(xis), np.cos(xis), np.sin(xis)])
    (B, a, b), *_ = np.linalg.lstsq(M, p, rcond=None)
    A = 2 * math.hypot(a, b)
    phi = math.atan2(b, -a)
    return phi, A, B


@dataclass(frozen=True)
class EnvelopePoint:
    tau: float
    A: float
    A_stderr: float
    A_predicted_zero_jump: float


def contrast_envelope(
    ndot: float,
    tau_grid: Sequence[float],
    trajectories: int,
    rng_seed: int,
    xi_points: int = 8,
    heating_mode: str = "uniform_jump",
    nmax: int = DEFAULT_FOCK_CUTOFF,
) -> list[EnvelopePoint]:
    """Heating-only Ramsey contrast A(tau) from simulated readout-phase sweeps.

    Each trajectory yields an exact fringe P(xi) over `xi_points` equally spaced
    phases; its contrast phasor is A e^{-i Phi}. The ensemble contrast is the
    modulus of the mean phasor, with a standard error from the spread of the
    phasors projected on the mean direction.
    """
    if trajectories < 1000:
        raise ValueError("need at least 1000 trajectories")
    noise = NoiseModel(heating_rate=ndot, heating_mode=heating_mode, prep_n1_population=0.0)
    sim = ShotSimulator(TrapConfig.reference_trap(), NonlinearCoupling(0.0), noise, nmax=nmax)
    xis = 2 * math.pi * np.arange(xi_points) / xi_points
    weights = -4.0 / xi_points * np.exp(1j * xis)
    theta = math.pi / 2

    base = None
    out = []
    for i_tau, tau in enumerate(tau_grid):
        seeds = derive_seeds(rng_seed, trajectories, STREAM_TRAJECTORIES, i_tau)
        zero = _readout_populations(sim.pre_readout(theta, tau, 0.0, 0.0), xis) @ weights
        phasors = np.empty(trajectories, dtype=complex)
        for j, seed in enumerate(seeds):
            rng = generator(seed)
            if heating_mode == "uniform_jump":
                times = sample_jump_times(tau, ndot, rng)
                if len(times) == 0:
                    phasors[j] = zero
                    continue
                amps = sim.pre_readout(theta, tau, 0.0, 0.0, 0, times)
            else:
                state = sim.prepare(theta)
                state, _ = free_evolve(state, tau, None, noise, 0.0, rng)
                amps = apply_blue_sideband(state, math.pi, 0.0).amplitudes
            phasors[j] = _readout_populations(amps, xis) @ weights
        mean = phasors.mean()
        A = abs(mean)
        direction = mean / A if A > 0 else 1.0
        proj = (phasors * np.conj(direction)).real
        stderr = float(proj.std(ddof=1) / math.sqrt(trajectories))
        if base is None:
            base = abs(zero)
        out.append(EnvelopePoint(float(tau), float(A), stderr, float(base * math.exp(-ndot * tau))))
    return out
