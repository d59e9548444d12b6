"""Harmonic-oscillator helpers and the physical constants used everywhere else.

All quantities are SI. Trap frequencies are angular (rad/s).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as _codata

MAX_HERMITE_ORDER = 64
DEFAULT_FOCK_CUTOFF = 20


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float
    elementary_charge_sq_over_4pi_eps0: float
    atomic_mass_unit: float

    def __post_init__(self):
        for name in ("hbar", "elementary_charge_sq_over_4pi_eps0", "atomic_mass_unit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


CONSTANTS = PhysicalConstants(
    hbar=_codata.hbar,
    elementary_charge_sq_over_4pi_eps0=_codata.e**2 / (4 * np.pi * _codata.epsilon_0),
    atomic_mass_unit=_codata.atomic_mass,
)


def characteristic_length(mass: float, nu: float) -> float:
    """Ground-state length scale sqrt(hbar / (m nu)) for angular frequency `nu`."""
    if not mass > 0 or not nu > 0:
        raise ValueError(f"mass and nu must be positive, got mass={mass!r}, nu={nu!r}")
    return float(np.sqrt(CONSTANTS.hbar / (mass * nu)))


def frequency_for_length(mass: float, x0: float) -> float:
    """Inverse of `characteristic_length`: the angular frequency giving length `x0`."""
    if not mass > 0 or not x0 > 0:
        raise ValueError("mass and x0 must be positive")
    return CONSTANTS.hbar / (mass * x0**2)


@dataclass(frozen=True)
class TrapConfig:
    """Ideal 3-D harmonic trap. The x axis carries the Ramsey superposition."""

    mass: float
    nu_x: float
    nu_y: float
    nu_z: float
    nbar_y: float = 0.0
    nbar_z: float = 0.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        for name in ("nu_x", "nu_y", "nu_z"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.nbar_y < 0 or self.nbar_z < 0:
            raise ValueError("thermal occupations must be non-negative")

    @property
    def x0_x(self) -> float:
        return characteristic_length(self.mass, self.nu_x)

    @property
    def x0_y(self) -> float:
        return characteristic_length(self.mass, self.nu_y)

    @property
    def x0_z(self) -> float:
        return characteristic_length(self.mass, self.nu_z)

    @property
    def lengths(self) -> tuple[float, float, float]:
        return self.x0_x, self.x0_y, self.x0_z

    @classmethod
    def isotropic(cls, x0: float, mass: float | None = None) -> "TrapConfig":
        """Isotropic trap whose characteristic length is `x0` (default mass 40 u)."""
        if mass is None:
            mass = 40 * CONSTANTS.atomic_mass_unit
        nu = frequency_for_length(mass, x0)
        return cls(mass=mass, nu_x=nu, nu_y=nu, nu_z=nu)

    @classmethod
    def reference_trap(cls, nbar: float = 3.0) -> "TrapConfig":
        """40Ca+ at 2pi x (1.01, 2.52, 2.79) MHz with Doppler-limited transverse modes."""
        two_pi = 2 * np.pi
        return cls(
            mass=40 * CONSTANTS.atomic_mass_unit,
            nu_x=two_pi * 1.01e6,
            nu_y=two_pi * 2.52e6,
            nu_z=two_pi * 2.79e6,
            nbar_y=nbar,
            nbar_z=nbar,
        )

    def to_dict(self) -> dict:
        return {
            "mass": self.mass,
            "nu_x": self.nu_x,
            "nu_y": self.nu_y,
            "nu_z": self.nu_z,
            "nbar_y": self.nbar_y,
            "nbar_z": self.nbar_z,
        }


def hermite(n: int, u):
    """Physicists' Hermite polynomial H_n(u) by three-term recurrence."""
    if n < 0 or n > MAX_HERMITE_ORDER:
        raise NotImplementedError(f"Hermite order {n} unsupported (0..{MAX_HERMITE_ORDER})")
    u = np.asarray(u, dtype=float)
    h_prev = np.ones_like(u)
    if n == 0:
        return h_prev
    h = 2 * u
    for k in range(1, n):
        h_prev, h = h, 2 * u * h - 2 * k * h_prev
    return h


def normalized_hermite(n: int, u):
    """H_n(u) / sqrt(2^n n!) by the normalized three-term recurrence.

    Stays O(1) in magnitude for every supported order, unlike the bare
    polynomial.
    """
    if n < 0 or n > MAX_HERMITE_ORDER:
        raise NotImplementedError(f"Fock level {n} unsupported (0..{MAX_HERMITE_ORDER})")
    u = np.asarray(u, dtype=float)
    h_prev = np.ones_like(u)
    if n == 0:
        return h_prev
    h = np.sqrt(2.0) * u
    for k in range(1, n):
        h_prev, h = h, np.sqrt(2.0 / (k + 1)) * u * h - np.sqrt(k / (k + 1)) * h_prev
    return h


def fock_wavefunction(n: int, x, x0: float):
    """Real eigenfunction psi_n(x) of the 1-D oscillator with length scale `x0`."""
    if not x0 > 0:
        raise ValueError("x0 must be positive")
    u = np.asarray(x, dtype=float) / x0
    return normalized_hermite(n, u) * np.pi**-0.25 * np.exp(-0.5 * u**2) / np.sqrt(x0)


def fock_probability_density(n: int, x, x0: float):
    """|psi_n(x)|^2 in 1/m."""
    return fock_wavefunction(n, x, x0) ** 2


def thermal_gaussian_width(x0: float, nbar: float) -> float:
    """Position standard deviation of a thermal oscillator state with mean occupation `nbar`."""
    if nbar < 0:
        raise ValueError(f"nbar must be non-negative, got {nbar!r}")
    return x0 * np.sqrt((2 * nbar + 1) / 2)
