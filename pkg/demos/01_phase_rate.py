"""How large is the non-linear phase, and how much do trap details change it?

Compares the closed-form rate with the numerical oracle for an isotropic
10 nm trap, then shows the correction factor for a realistic anisotropic trap
whose transverse modes are thermally occupied.
"""
import math

from nlramsey.estimator import phase_per_epsilon
from nlramsey.nonlinear import (
    NonlinearCoupling,
    SuperpositionSpec,
    phase_rate_closed_form,
    phase_rate_numeric,
    spread_correction_factor,
)
from nlramsey.oscillator import TrapConfig

iso = TrapConfig.isotropic(10e-9)
coupling = NonlinearCoupling(1e-12)

print("ground weight  closed form (rad/s)  numeric (rad/s)  rel. diff")
for p0 in (0.1, 0.2, 0.5, 0.8, 0.9):
    spec = SuperpositionSpec.from_ground_population(p0)
    a = phase_rate_closed_form(spec, iso, coupling).rate
    b = phase_rate_numeric(spec, iso, coupling, "ground", cross_terms=False).rate
    print(f"{p0:12.1f}  {a:19.6e}  {b:15.6e}  {abs(b - a) / a:.1e}")

unit = phase_rate_closed_form(SuperpositionSpec.from_ground_population(0.5), iso, NonlinearCoupling(1.0)).rate
print(f"\nbalanced state: {unit * 1e-3:.3e} rad per ms per unit epsilon")

trap = TrapConfig.reference_trap()
print(f"\naxial length scale x0 = {trap.x0_x * 1e9:.2f} nm")
for transverse in ("ground", "thermal"):
    print(f"spread correction ({transverse} transverse modes): {spread_correction_factor(trap, transverse):.4f}")

th1, th2 = 2 * math.asin(math.sqrt(0.2)), 2 * math.asin(math.sqrt(0.8))
conv = phase_per_epsilon(th1, th2, 0.015, trap)
print(f"differential phase per unit epsilon at 15 ms: {conv:.4e} rad")
print(f"epsilon giving one full 2 pi cycle: {2 * math.pi / abs(conv):.3e}")
