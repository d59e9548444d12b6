"""Coulomb self-interaction of a trapped-ion wavefunction.

Two independent routes to the Ramsey phase rate are provided:

* ``phase_rate_closed_form`` evaluates the analytic first-order result for an
  isotropic trap with transverse modes in their ground state.
* ``phase_rate_numeric`` builds the source density from oscillator
  eigenfunctions, evaluates the Coulomb integrals by quadrature and either reads
  off the secular energy difference or time-integrates the non-linear
  two-level equations of motion and fits the accumulated relative phase.

The Coulomb kernel is handled with the Gaussian-transform identity
``1/r = 2/sqrt(pi) * int_0^inf exp(-r^2 t^2) dt``; for every ``t`` the
remaining spatial integrals factor per axis into polynomial-times-Gaussian
integrals, which Gauss-Hermite quadrature evaluates exactly once enough nodes
are used. The outer ``t`` integral is done adaptively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .oscillator import CONSTANTS, TrapConfig, normalized_hermite, thermal_gaussian_width

SQRT_2PI = math.sqrt(2 * math.pi)
CLOSED_FORM = "closed_form"
NUMERIC_SECULAR = "numeric_secular"
NUMERIC_DYNAMIC = "numeric_dynamic"
RATE_METHODS = (CLOSED_FORM, NUMERIC_SECULAR, NUMERIC_DYNAMIC)


class QuadratureAccuracyError(RuntimeError):
    """Quadrature error estimate exceeded the requested tolerance."""


class RateFitError(RuntimeError):
    """The accumulated phase was not linear in time to the requested tolerance."""


@dataclass(frozen=True)
class SuperpositionSpec:
    """Real amplitudes of alpha0 |0> + alpha1 |1> on the x mode."""

    alpha0: float
    alpha1: float

    def __post_init__(self):
        if not (0 <= self.alpha0 <= 1 and 0 <= self.alpha1 <= 1):
            raise ValueError("amplitudes must lie in [0, 1]")
        if abs(self.alpha0**2 + self.alpha1**2 - 1) > 1e-12:
            raise ValueError("alpha0^2 + alpha1^2 must equal 1")

    @classmethod
    def from_theta(cls, theta: float) -> "SuperpositionSpec":
        a0, a1 = abs(math.sin(theta / 2)), abs(math.cos(theta / 2))
        norm = math.hypot(a0, a1)
        return cls(a0 / norm, a1 / norm)

    @classmethod
    def from_ground_population(cls, p0: float) -> "SuperpositionSpec":
        if not 0 <= p0 <= 1:
            raise ValueError("population must lie in [0, 1]")
        return cls(math.sqrt(p0), math.sqrt(1 - p0))

    @property
    def theta(self) -> float:
        return 2 * math.atan2(self.alpha0, self.alpha1)

    @property
    def weights(self) -> tuple[float, float]:
        return self.alpha0**2, self.alpha1**2


@dataclass(frozen=True)
class NonlinearCoupling:
    epsilon_gamma: float

    @property
    def kappa(self) -> float:
        """Coupling energy times length, epsilon * e^2 / (4 pi eps0)."""
        return self.epsilon_gamma * CONSTANTS.elementary_charge_sq_over_4pi_eps0


@dataclass(frozen=True)
class PhaseRate:
    rate: float
    method: str
    cross_terms_included: bool = False
    tolerance: float = 0.0
    details: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.rate):
            raise ValueError("phase rate must be finite")
        if self.method not in RATE_METHODS:
            raise ValueError(f"unknown method {self.method!r}")


# --------------------------------------------------------------------------
# Coulomb potential of a Gaussian cloud
# --------------------------------------------------------------------------


def nl_potential_at_point(source_widths, center_offset, point, kappa: float) -> float:
    """Coulomb energy at `point` from a unit-normalized anisotropic Gaussian cloud.

    The cloud has per-axis standard deviations `source_widths` and is centred at
    `center_offset`.
    """
    sig = np.asarray(source_widths, dtype=float)
    if sig.shape != (3,) or np.any(sig <= 0):
        raise ValueError("source_widths must be three positive lengths")
    d = np.asarray(point, dtype=float) - np.asarray(center_offset, dtype=float)
    if np.allclose(sig, sig[0], rtol=1e-14, atol=0.0):
        r = float(np.linalg.norm(d))
        s = sig[0]
        if r < 1e-12 * s:
            return kappa * math.sqrt(2 / math.pi) / s
        return kappa * math.erf(r / (s * math.sqrt(2))) / r

    # substitute t = u / ((1 - u) * s_min) to map [0, inf) onto [0, 1)
    s_min = float(sig.min())

    def integrand(u):
        if u >= 1.0:
            return 0.0
        t = u / ((1 - u) * s_min)
        dt_du = 1.0 / ((1 - u) ** 2 * s_min)
        q = 1 + 2 * sig**2 * t**2
        return float(np.exp(-np.sum(d**2 * t**2 / q)) / np.sqrt(np.prod(q))) * dt_du

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=200)
    return kappa * 2 / math.sqrt(math.pi) * val


# --------------------------------------------------------------------------
# Four-index Coulomb integrals over x-mode Fock states
# --------------------------------------------------------------------------


def _pair_polynomial(a: int, b: int, u):
    """psi_a psi_b(x) with the Gaussian factor exp(-u^2) / (sqrt(pi) x0) removed."""
    return normalized_hermite(a, u) * normalized_hermite(b, u)


@lru_cache(maxsize=None)
def _gauss_hermite(n: int):
    return np.polynomial.hermite.hermgauss(n)


def _x_overlap(a: int, b: int, c: int, d: int, s: float, nodes: int) -> float:
    """int int psi_a psi_b(u) psi_c psi_d(u') exp(-s^2 (u-u')^2) du du' / pi, x0 = 1.

    Rotating to v = (u-u')/sqrt2, w = (u+u')/sqrt2 leaves the weight
    exp(-(1 + 2 s^2) v^2 - w^2), so a rescaled product Gauss-Hermite rule is
    exact for the polynomial remainder.
    """
    z, wts = _gauss_hermite(nodes)
    g = math.sqrt(1 + 2 * s * s)
    v = z[:, None] / g
    w = z[None, :]
    u1 = (v + w) / math.sqrt(2)
    u2 = (w - v) / math.sqrt(2)
    f = _pair_polynomial(a, b, u1) * _pair_polynomial(c, d, u2)
    return float(wts @ f @ wts) / (math.pi * g)


def _x_overlap_adaptive(a, b, c, d, s, tol=1e-12):
    # polynomial degree a+b+c+d; start exact-in-principle and confirm by doubling
    n = max(8, (a + b + c + d) // 2 + 4)
    prev = _x_overlap(a, b, c, d, s, n)
    for _ in range(3):
        n *= 2
        cur = _x_overlap(a, b, c, d, s, n)
        # values scale like 1/sqrt(1 + 2 s^2); cancellation can make them far smaller
        if abs(cur - prev) <= tol / math.sqrt(1 + 2 * s * s):
            return cur
        prev = cur
    raise QuadratureAccuracyError("Gauss-Hermite overlap did not converge")


def coulomb_integral(
    levels: tuple[int, int, int, int],
    x0: float,
    transverse_widths: tuple[float, float],
    rtol: float = 1e-10,
) -> float:
    """T_abcd = int int psi_a psi_b(r) psi_c psi_d(r') / |r - r'| d^3r d^3r'.

    `levels` are x-mode Fock indices; both transverse axes are frozen Gaussian
    densities with standard deviations `transverse_widths`. Returns 1/m.
    """
    a, b, c, d = levels
    if (a + b + c + d) % 2:
        return 0.0
    sy, sz = (w / x0 for w in transverse_widths)

    # t in units of 1/x0; map [0, inf) onto [0, 1)
    def integrand(u):
        if u >= 1.0:
            return 0.0
        t = u / (1 - u)
        jac = 1.0 / (1 - u) ** 2
        gy = 1.0 / math.sqrt(1 + 4 * sy * sy * t * t)
        gz = 1.0 / math.sqrt(1 + 4 * sz * sz * t * t)
        return _x_overlap_adaptive(a, b, c, d, t) * gy * gz * jac

    val, err = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=rtol * 1e-2, limit=200)
    if err > rtol * abs(val) and err > 1e-300:
        raise QuadratureAccuracyError(f"Coulomb integral error {err:.3e} exceeds tolerance")
    return 2 / math.sqrt(math.pi) * val / x0


def _transverse_widths(trap: TrapConfig, transverse: str) -> tuple[float, float]:
    if transverse == "ground":
        return thermal_gaussian_width(trap.x0_y, 0.0), thermal_gaussian_width(trap.x0_z, 0.0)
    if transverse == "thermal":
        return thermal_gaussian_width(trap.x0_y, trap.nbar_y), thermal_gaussian_width(trap.x0_z, trap.nbar_z)
    raise ValueError(f"transverse must be 'ground' or 'thermal', got {transverse!r}")


@lru_cache(maxsize=64)
def _coulomb_tensor_cached(x0: float, widths: tuple[float, float]) -> np.ndarray:
    tensor = np.zeros((2, 2, 2, 2))
    pairs = [(0, 0), (0, 1), (1, 1)]
    done: dict = {}
    for ab in pairs:
        for cd in pairs:
            key = tuple(sorted((ab, cd)))
            if key not in done:
                done[key] = coulomb_integral(ab + cd, x0, widths)
            val = done[key]
            for a_, b_ in {ab, ab[::-1]}:
                for c_, d_ in {cd, cd[::-1]}:
                    tensor[a_, b_, c_, d_] = val
    tensor.setflags(write=False)
    return tensor


def coulomb_tensor(trap: TrapConfig, transverse: str = "ground") -> np.ndarray:
    """All T_abcd for a, b, c, d in {0, 1} (1/m), symmetric under a<->b, c<->d, ab<->cd."""
    return _coulomb_tensor_cached(trap.x0_x, _transverse_widths(trap, transverse))


# --------------------------------------------------------------------------
# Phase rates
# --------------------------------------------------------------------------


def closed_form_coefficients(trap: TrapConfig, coupling: NonlinearCoupling) -> tuple[float, float]:
    """(c0, c1) with rate = c0 * alpha0^2 + c1 * alpha1^2 in rad/s."""
    scale = coupling.kappa / (CONSTANTS.hbar * trap.x0_x) / (30 * SQRT_2PI)
    return 10 * scale, scale


def phase_rate_closed_form(
    spec: SuperpositionSpec, trap: TrapConfig, coupling: NonlinearCoupling
) -> PhaseRate:
    c0, c1 = closed_form_coefficients(trap, coupling)
    w0, w1 = spec.weights
    return PhaseRate(rate=c0 * w0 + c1 * w1, method=CLOSED_FORM)


def secular_coefficients(
    trap: TrapConfig,
    coupling: NonlinearCoupling,
    transverse: str = "ground",
    cross_terms: bool = False,
) -> tuple[float, float]:
    """Numerical (c0, c1) with rate = c0 * alpha0^2 + c1 * alpha1^2 in rad/s.

    Branch energies are E_a = kappa * sum_c w_c T_aacc. The resonant part of
    the interference density adds kappa * T_0101 * w_(other branch) to each branch.
    """
    T = coulomb_tensor(trap, transverse)
    k = coupling.kappa / CONSTANTS.hbar
    c0 = k * (T[0, 0, 0, 0] - T[1, 1, 0, 0])
    c1 = k * (T[0, 0, 1, 1] - T[1, 1, 1, 1])
    if cross_terms:
        c0 -= k * T[0, 1, 0, 1]
        c1 += k * T[0, 1, 0, 1]
    return c0, c1


def _perturbative_check(rate: float, trap: TrapConfig):
    if abs(rate) * (2 * math.pi / trap.nu_x) > 1e-3:
        raise ValueError(
            "coupling too strong for first-order treatment: "
            f"|rate| * period = {abs(rate) * 2 * math.pi / trap.nu_x:.3g}"
        )


def integrate_two_level(
    spec: SuperpositionSpec,
    trap: TrapConfig,
    coupling: NonlinearCoupling,
    transverse: str = "ground",
    cross_terms: bool = False,
    periods: int = 20,
    steps_per_period: int = 64,
):
    """Time-integrate the interaction-picture amplitudes (b0, b1) under the self-interaction.

    i hbar db_a/dt = sum_b W_ab b_b with
    W_ab = kappa * sum_cd T_abcd conj(b_c) b_d exp(i (a - b + c - d) nu t),
    keeping only c == d unless `cross_terms` is set. Returns (times, amplitudes)
    sampled once per motional period.
    """
    if periods < 10:
        raise ValueError("need at least 10 motional periods")
    T = coulomb_tensor(trap, transverse) * (coupling.kappa / CONSTANTS.hbar)
    nu = trap.nu_x
    idx = np.arange(2)
    # phase exponent (a - b + c - d) for every index combination
    expo = idx[:, None, None, None] - idx[None, :, None, None] + idx[None, None, :, None] - idx[None, None, None, :]
    mask = np.ones((2, 2, 2, 2), dtype=bool) if cross_terms else (idx[:, None] == idx[None, :])[None, None, :, :]
    Tm = np.where(mask, T, 0.0)

    def rhs(t, b):
        phases = np.exp(1j * expo * nu * t)
        W = np.einsum("abcd,c,d,abcd->ab", Tm, b.conj(), b, phases)
        return -1j * (W @ b)

    dt = 2 * math.pi / nu / steps_per_period
    b = np.array([spec.alpha0, spec.alpha1], dtype=complex)
    times = [0.0]
    samples = [b.copy()]
    t = 0.0
    for p in range(periods):
        for _ in range(steps_per_period):
            k1 = rhs(t, b)
            k2 = rhs(t + dt / 2, b + dt / 2 * k1)
            k3 = rhs(t + dt / 2, b + dt / 2 * k2)
            k4 = rhs(t + dt, b + dt * k3)
            b = b + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += dt
        # resynchronise clock to avoid drift in the stroboscopic samples
        t = (p + 1) * 2 * math.pi / nu
        times.append(t)
        samples.append(b.copy())
    return np.array(times), np.array(samples)


def phase_rate_numeric(
    spec: SuperpositionSpec,
    trap: TrapConfig,
    coupling: NonlinearCoupling,
    transverse: str = "ground",
    cross_terms: bool = False,
    dynamic: bool = True,
    periods: int = 20,
    fit_rtol: float = 1e-3,
) -> PhaseRate:
    """Phase rate from quadrature of the Coulomb integrals.

    With ``dynamic=True`` the two-level non-linear equations are integrated in
    time and the relative phase arg(b1 / b0) is fitted with a straight line
    on stroboscopic samples; otherwise the secular energy difference is
    returned directly.
    """
    c0, c1 = secular_coefficients(trap, coupling, transverse, cross_terms)
    w0, w1 = spec.weights
    secular = c0 * w0 + c1 * w1
    _perturbative_check(secular, trap)
    if not dynamic:
        return PhaseRate(secular, NUMERIC_SECULAR, cross_terms, tolerance=1e-10 * abs(secular))

    times, amps = integrate_two_level(spec, trap, coupling, transverse, cross_terms, periods)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.unwrap(np.angle(amps[:, 1]) - np.angle(amps[:, 0]))
    if spec.alpha0 == 0 or spec.alpha1 == 0:
        raise ValueError("relative phase undefined for a single Fock state")
    phase = rel - rel[0]
    # phase(t) = rate * t, fitted through the origin
    rate = float(times @ phase / (times @ times))
    resid = phase - rate * times
    total = abs(rate) * times[-1]
    scale = max(total, 1e-12 * times[-1])
    rel_resid = float(np.sqrt(np.mean(resid**2)) / scale)
    if rel_resid > fit_rtol:
        raise RateFitError(f"relative fit residual {rel_resid:.2e} exceeds {fit_rtol:.1e}")
    return PhaseRate(
        rate,
        NUMERIC_DYNAMIC,
        cross_terms,
        tolerance=max(rel_resid * abs(rate), 1e-12),
        details={"secular_rate": secular, "fit_relative_residual": rel_resid, "periods": periods},
    )


def rate_coefficients(
    trap: TrapConfig,
    coupling: NonlinearCoupling,
    method: str = CLOSED_FORM,
    transverse: str = "ground",
) -> tuple[float, float]:
    """(c0, c1) for any rate method; the dynamic route shares the secular coefficients."""
    if method == CLOSED_FORM:
        return closed_form_coefficients(trap, coupling)
    if method in (NUMERIC_SECULAR, NUMERIC_DYNAMIC):
        return secular_coefficients(trap, coupling, transverse)
    raise ValueError(f"unknown rate method {method!r}")


def differential_phase_model(
    theta1: float,
    theta2: float,
    tau: float,
    trap: TrapConfig,
    coupling: NonlinearCoupling,
    rate_method: str = CLOSED_FORM,
    transverse: str = "ground",
) -> float:
    """phi_NL(tau; theta1) - phi_NL(tau; theta2) in rad."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if theta1 == theta2:
        return 0.0
    s1 = SuperpositionSpec.from_theta(theta1)
    s2 = SuperpositionSpec.from_theta(theta2)
    if rate_method == NUMERIC_DYNAMIC:
        r1 = phase_rate_numeric(s1, trap, coupling, transverse).rate
        r2 = phase_rate_numeric(s2, trap, coupling, transverse).rate
        return (r1 - r2) * tau
    c0, c1 = rate_coefficients(trap, coupling, rate_method, transverse)
    return ((c0 * s1.alpha0**2 + c1 * s1.alpha1**2) - (c0 * s2.alpha0**2 + c1 * s2.alpha1**2)) * tau


def state_coefficient(population0: float) -> float:
    """The dimensionless factor (10 a0^2 + a1^2) / (30 sqrt(2 pi)) for ground weight a0^2."""
    return (10 * population0 + (1 - population0)) / (30 * SQRT_2PI)


def spread_correction_factor(trap: TrapConfig, transverse: str = "thermal") -> float:
    """Ratio of the numerical differential rate to the closed-form one for this trap.

    Captures anisotropy and thermal transverse spread; independent of the two
    preparation angles because both rates are affine in alpha0^2.
    """
    unit = NonlinearCoupling(1.0)
    n0, n1 = secular_coefficients(trap, unit, transverse)
    a0, a1 = closed_form_coefficients(trap, unit)
    return (n0 - n1) / (a0 - a1)
