"""Heating sets the optimal interrogation time.

A single heating jump scrambles the motional state and removes the Ramsey
contrast, so the ensemble contrast follows the zero-jump probability. Longer
interrogation accumulates more non-linear phase but loses contrast; the
time-normalized noise on epsilon therefore has a minimum.
"""
import math

from nlramsey.oscillator import TrapConfig
from nlramsey.scan import curves, interior_minimum, simulate_tau_scan
from nlramsey.simulator import NoiseModel, contrast_envelope

print("tau (ms)  contrast   stderr   exp(-ndot tau)")
for p in contrast_envelope(10.0, [0.005, 0.01, 0.015, 0.025, 0.05], 4000, rng_seed=1):
    print(f"{p.tau * 1e3:8.1f}  {p.A:8.4f}  {p.A_stderr:7.4f}  {math.exp(-10 * p.tau):8.4f}")

points = simulate_tau_scan(TrapConfig.reference_trap(), NoiseModel(), heating_rates=(7.0, 10.0, 13.0),
                           repetitions=1000, trajectories=500, master_seed=1)
print("\nnormalized std of epsilon (x 1e-12, per sqrt(s))")
table = curves(points)
taus = table[10.0][0]
print("tau (ms) " + "".join(f"{r:>10.0f}/s" for r in table))
for i, tau in enumerate(taus):
    print(f"{tau * 1e3:8.1f} " + "".join(f"{v[1][i] * 1e12:12.3f}" for v in table.values()))
for rate, (t, v) in table.items():
    print(f"heating {rate:.0f}/s: minimum at {interior_minimum(t, v)} s")
