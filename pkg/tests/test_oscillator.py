import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import constants, integrate

from nlramsey.oscillator import (
    CONSTANTS,
    MAX_HERMITE_ORDER,
    PhysicalConstants,
    TrapConfig,
    characteristic_length,
    fock_probability_density,
    frequency_for_length,
    hermite,
    thermal_gaussian_width,
)

CA40 = 40 * constants.atomic_mass


def test_constants_come_from_codata():
    assert CONSTANTS.hbar == constants.hbar
    assert CONSTANTS.elementary_charge_sq_over_4pi_eps0 == pytest.approx(
        constants.e**2 / (4 * math.pi * constants.epsilon_0), rel=1e-15
    )
    with pytest.raises(ValueError):
        PhysicalConstants(hbar=-1.0, elementary_charge_sq_over_4pi_eps0=1.0, atomic_mass_unit=1.0)
    with pytest.raises(Exception):
        CONSTANTS.hbar = 1.0


def test_length_at_published_axial_frequency():
    x0 = characteristic_length(CA40, 2 * math.pi * 1.01e6)
    assert x0 == pytest.approx(1.5817e-8, rel=1e-4)


def test_quadrupled_mass_halves_length():
    nu = 2 * math.pi * 1.01e6
    assert characteristic_length(4 * CA40, nu) == pytest.approx(characteristic_length(CA40, nu) / 2, rel=1e-15)


def test_reference_scale_round_trip():
    nu = frequency_for_length(CA40, 10e-9)
    assert characteristic_length(CA40, nu) == pytest.approx(10e-9, rel=1e-14)


@pytest.mark.parametrize("mass,nu", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0), (1.0, -2.0)])
def test_length_rejects_non_positive(mass, nu):
    with pytest.raises(ValueError):
        characteristic_length(mass, nu)


@settings(max_examples=50, deadline=None)
@given(k=st.floats(1e-3, 1e3))
def test_length_homogeneous(k):
    nu = 2 * math.pi * 1e6
    assert characteristic_length(k * CA40, nu / k) == pytest.approx(characteristic_length(CA40, nu), rel=1e-12)


def test_trap_config_validation_and_derived_lengths():
    trap = TrapConfig.reference_trap()
    assert trap.x0_x == pytest.approx(1.5817e-8, rel=1e-4)
    assert trap.x0_y < trap.x0_x and trap.x0_z < trap.x0_y
    assert trap.nbar_y == trap.nbar_z == 3.0
    with pytest.raises(ValueError):
        TrapConfig(CA40, -1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TrapConfig(CA40, 1.0, 1.0, 1.0, nbar_y=-0.1)
    iso = TrapConfig.isotropic(10e-9)
    assert iso.x0_x == pytest.approx(10e-9, rel=1e-14)
    assert iso.x0_y == pytest.approx(10e-9, rel=1e-14)


def test_hermite_low_orders_and_limit():
    u = np.linspace(-2, 2, 7)
    assert np.allclose(hermite(0, u), 1)
    assert np.allclose(hermite(1, u), 2 * u)
    assert np.allclose(hermite(3, u), 8 * u**3 - 12 * u)
    hermite(MAX_HERMITE_ORDER, 0.3)
    with pytest.raises(NotImplementedError):
        hermite(MAX_HERMITE_ORDER + 1, 0.3)
    with pytest.raises(NotImplementedError):
        fock_probability_density(MAX_HERMITE_ORDER + 1, 0.0, 1.0)


def test_density_peak_and_parity():
    x0 = 1e-8
    assert fock_probability_density(0, 0.0, x0) == pytest.approx(1 / (math.sqrt(math.pi) * x0), rel=1e-14)
    assert fock_probability_density(1, 0.0, x0) == 0.0


@pytest.mark.parametrize("n", range(6))
def test_density_normalized_and_second_moment(n):
    x0 = 1.0
    norm, _ = integrate.quad(lambda x: fock_probability_density(n, x, x0), -30, 30, epsabs=1e-13, limit=200)
    m2, _ = integrate.quad(lambda x: x * x * fock_probability_density(n, x, x0), -30, 30, epsabs=1e-13, limit=200)
    assert abs(norm - 1) < 1e-9
    assert m2 == pytest.approx((2 * n + 1) / 2, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(0, 20), x=st.floats(-8, 8))
def test_density_even(n, x):
    assert fock_probability_density(n, -x, 1.0) == pytest.approx(fock_probability_density(n, x, 1.0), rel=1e-12, abs=1e-300)


def test_thermal_width():
    assert thermal_gaussian_width(2.0, 0) == pytest.approx(2 / math.sqrt(2))
    assert thermal_gaussian_width(1.0, 3) == pytest.approx(1.8708, rel=1e-4)
    widths = [thermal_gaussian_width(1.0, n) for n in np.linspace(0, 10, 21)]
    assert np.all(np.diff(widths) > 0)
    with pytest.raises(ValueError):
        thermal_gaussian_width(1.0, -1)
