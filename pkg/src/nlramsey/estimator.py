"""Ramsey phase inversion, projection-noise propagation and the epsilon estimate."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize

from .nonlinear import state_coefficient
from .oscillator import CONSTANTS, TrapConfig

log = logging.getLogger(__name__)

MIN_CONTRAST = 1e-3


class DegenerateContrastError(ValueError):
    """Fringe contrast too small for the phase to be defined."""


def wrap_phase(phi):
    """Map angles to (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(phi, dtype=float), 2 * np.pi)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RamseyTriple:
    """Populations at readout phases xi1, xi1 + pi/2, xi1 + pi."""

    P1: float
    P2: float
    P3: float
    N: int
    xi1: float = 0.0
    tau: float = 0.0
    theta: float = math.pi / 2

    def __post_init__(self):
        for p in (self.P1, self.P2, self.P3):
            if not 0 <= p <= 1:
                raise ValueError(f"population {p!r} outside [0, 1]")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @property
    def populations(self) -> np.ndarray:
        return np.array([self.P1, self.P2, self.P3])

    @property
    def xis(self) -> np.ndarray:
        return self.xi1 + np.array([0.0, math.pi / 2, math.pi])

    @classmethod
    def from_model(cls, Phi, A, B, xi1=0.0, N=200, tau=0.0, theta=math.pi / 2) -> "RamseyTriple":
        """Exact populations P = B - (A/2) cos(Phi + xi) at the three readout phases."""
        xis = xi1 + np.array([0.0, math.pi / 2, math.pi])
        P = B - 0.5 * A * np.cos(Phi + xis)
        return cls(*(float(np.clip(p, 0.0, 1.0)) for p in P), N=N, xi1=xi1, tau=tau, theta=theta)


@dataclass(frozen=True)
class PhaseEstimate:
    Phi: float
    A: float
    B: float
    sigma_Phi: float
    covariance: np.ndarray = field(repr=False, compare=False)
    xi1: float = 0.0
    tau: float = 0.0
    theta: float = math.pi / 2

    def predicted_populations(self) -> np.ndarray:
        xis = self.xi1 + np.array([0.0, math.pi / 2, math.pi])
        return self.B - 0.5 * self.A * np.cos(self.Phi + xis)


def _quadratures(triple: RamseyTriple):
    P1, P2, P3 = triple.P1, triple.P2, triple.P3
    X = P3 - P1  # A cos(Phi + xi1)
    Y = 2 * P2 - P1 - P3  # A sin(Phi + xi1)
    return X, Y


def _jacobian(triple: RamseyTriple) -> np.ndarray:
    """d(Phi, A, B) / d(P1, P2, P3)."""
    X, Y = _quadratures(triple)
    A2 = X * X + Y * Y
    A = math.sqrt(A2)
    dX = np.array([-1.0, 0.0, 1.0])
    dY = np.array([-1.0, 2.0, -1.0])
    return np.vstack([(X * dY - Y * dX) / A2, (X * dX + Y * dY) / A, np.array([0.5, 0.0, 0.5])])


def _check_contrast(triple: RamseyTriple, threshold: float):
    X, Y = _quadratures(triple)
    A = math.hypot(X, Y)
    if A < threshold:
        raise DegenerateContrastError(f"contrast {A:.2e} below {threshold:.1e}; phase undefined")
    return X, Y, A


def qpn_variances(triple: RamseyTriple) -> np.ndarray:
    """Binomial variance P(1 - P)/N of each measured population."""
    P = triple.populations
    return P * (1 - P) / triple.N


def invert_three_point(triple: RamseyTriple, min_contrast: float = MIN_CONTRAST) -> PhaseEstimate:
    X, Y, A = _check_contrast(triple, min_contrast)
    B = 0.5 * (triple.P1 + triple.P3)
    Phi = wrap_phase(math.atan2(Y, X) - triple.xi1)
    J = _jacobian(triple)
    cov = J @ np.diag(qpn_variances(triple)) @ J.T
    return PhaseEstimate(
        Phi=Phi,
        A=A,
        B=B,
        sigma_Phi=float(math.sqrt(cov[0, 0])),
        covariance=cov,
        xi1=triple.xi1,
        tau=triple.tau,
        theta=triple.theta,
    )


def propagate_phase_uncertainty(triple: RamseyTriple, min_contrast: float = MIN_CONTRAST) -> float:
    """Linearized QPN standard deviation of Phi."""
    _check_contrast(triple, min_contrast)
    dphi = _jacobian(triple)[0]
    return float(math.sqrt(np.sum(dphi**2 * qpn_variances(triple))))


def optimal_bias(Phi_expected: float) -> float:
    """First readout phase xi1 with Phi + xi1 = pi/2."""
    return wrap_phase(math.pi / 2 - Phi_expected)


def differential_phase_estimate(est1: PhaseEstimate, est2: PhaseEstimate) -> tuple[float, float]:
    """(Phi1 - Phi2 wrapped to (-pi, pi], sqrt(sigma1^2 + sigma2^2))."""
    return wrap_phase(est1.Phi - est2.Phi), math.hypot(est1.sigma_Phi, est2.sigma_Phi)


@dataclass(frozen=True)
class EpsilonEstimate:
    value: float
    sigma: float
    delta_phi: float
    correction_factor: float = 1.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not math.isfinite(self.value / self.sigma):
            raise ValueError("value/sigma must be finite")
        if not 0 < self.correction_factor <= 1:
            raise ValueError("correction_factor must lie in (0, 1]")


def phase_per_epsilon(theta1: float, theta2: float, tau: float, trap: TrapConfig, correction_factor: float = 1.0) -> float:
    """d(Delta phi_NL)/d(epsilon) in rad for the closed-form rate with a spread correction."""
    p1 = math.sin(theta1 / 2) ** 2
    p2 = math.sin(theta2 / 2) ** 2
    K = state_coefficient(p1) - state_coefficient(p2)
    return K * CONSTANTS.elementary_charge_sq_over_4pi_eps0 / (CONSTANTS.hbar * trap.x0_x) * tau * correction_factor


def epsilon_from_delta_phase(
    delta_phi: float,
    sigma: float,
    theta1: float,
    theta2: float,
    tau: float,
    trap: TrapConfig,
    correction_factor: float = 1.0,
    metadata: dict | None = None,
) -> EpsilonEstimate:
    if theta1 == theta2:
        raise ValueError("theta1 and theta2 must differ")
    if not tau > 0:
        raise ValueError("tau must be positive")
    denom = phase_per_epsilon(theta1, theta2, tau, trap, correction_factor)
    if denom == 0 or not math.isfinite(denom):
        raise ZeroDivisionError("phase-to-epsilon conversion factor vanishes")
    meta = {"tau": tau, "theta1": theta1, "theta2": theta2}
    meta.update(metadata or {})
    return EpsilonEstimate(
        value=delta_phi / denom,
        sigma=abs(sigma / denom),
        delta_phi=delta_phi,
        correction_factor=correction_factor,
        metadata=meta,
    )


@dataclass(frozen=True)
class GaussianFit:
    mean: float
    sigma: float
    sem: float
    n: int
    degenerate: bool = False
    hist_amplitude: float = float("nan")
    hist_mean: float = float("nan")
    hist_sigma: float = float("nan")
    bin_edges: np.ndarray = field(default=None, repr=False, compare=False)
    counts: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def curve(self, x):
        x = np.asarray(x, dtype=float)
        return self.hist_amplitude * np.exp(-0.5 * ((x - self.hist_mean) / self.hist_sigma) ** 2)


def _gauss(x, amp, mu, sig):
    return amp * np.exp(-0.5 * ((x - mu) / sig) ** 2)


def fit_gaussian(samples: Sequence[float], bins: int | None = None) -> GaussianFit:
    """Moment (maximum-likelihood) Gaussian parameters plus a least-squares histogram fit.

    `sem` is the standard error of the mean from the unbiased sample deviation.
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 samples")
    mean = float(np.mean(x))
    sigma = float(np.std(x))
    if sigma == 0 or np.all(x == x[0]):
        return GaussianFit(float(x[0]), 0.0, 0.0, n, degenerate=True)
    sem = float(np.std(x, ddof=1) / math.sqrt(n))
    if bins is None:
        bins = max(5, int(math.ceil(math.sqrt(n))))
    counts, edges = np.histogram(x, bins=bins)
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    p0 = (n * width / (sigma * math.sqrt(2 * math.pi)), mean, sigma)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            (amp, mu, sig), _ = optimize.curve_fit(_gauss, centers, counts, p0=p0, maxfev=10000)
        sig = abs(sig)
    except RuntimeError:
        amp, mu, sig = p0
    return GaussianFit(mean, sigma, sem, n, False, float(amp), float(mu), float(sig), edges, counts)


def tau_scan_statistics(
    estimates_by_tau: Mapping[float, Sequence[float]],
    wall_time_per_estimate: float | Mapping[float, float] | Callable[[float], float],
) -> list[tuple[float, float]]:
    """Sample standard deviation per tau, normalized to 1 s of integration time.

    `wall_time_per_estimate` is the time (s) one estimate costs at that tau.
    Taus with fewer than two estimates are skipped with a warning.
    """
    out = []
    for tau in sorted(estimates_by_tau):
        vals = np.asarray(estimates_by_tau[tau], dtype=float)
        if vals.size < 2:
            log.warning("tau=%g s has %d estimate(s); excluded", tau, vals.size)
            continue
        if callable(wall_time_per_estimate):
            wall = wall_time_per_estimate(tau)
        elif isinstance(wall_time_per_estimate, Mapping):
            wall = wall_time_per_estimate[tau]
        else:
            wall = float(wall_time_per_estimate)
        out.append((float(tau), float(np.std(vals, ddof=1) * math.sqrt(wall / 1.0))))
    return out


def resolve_cycles(
    main_phase: float,
    control_phase: float,
    tau_main: float,
    tau_control: float,
    max_cycles: int = 20,
) -> tuple[int, float]:
    """Whole 2 pi cycles to add to a wrapped main-run phase, given a control-run phase.

    The unwrapped main phase scaled by tau_control / tau_main must reproduce the
    wrapped control phase. Returns (cycles, wrapped residual of the best choice).
    """
    ratio = tau_control / tau_main
    ks = np.arange(-max_cycles, max_cycles + 1)
    resid = wrap_phase((main_phase + 2 * np.pi * ks) * ratio - control_phase)
    best = int(np.argmin(np.abs(resid)))
    return int(ks[best]), float(resid[best])


def circular_mean(phases: Sequence[float]) -> float:
    return float(np.angle(np.mean(np.exp(1j * np.asarray(phases, dtype=float)))))


def cycle_separation(ratio: float, max_cycles: int) -> float:
    """Smallest wrapped distance between control-phase predictions of two cycle counts in [-M, M]."""
    if max_cycles == 0:
        return 2 * math.pi
    n = np.arange(1, 2 * max_cycles + 1)
    return float(np.min(np.abs(wrap_phase(2 * np.pi * n * ratio))))


def cycle_search_limit(sigma_residual: float, ratio: float, max_cycles: int, z: float = 4.0) -> int:
    """Largest cycle range keeping competing hypotheses at least z sigma away from the true one."""
    limit = 0
    for m in range(1, max_cycles + 1):
        if cycle_separation(ratio, m) / 2 < z * sigma_residual:
            break
        limit = m
    return limit
