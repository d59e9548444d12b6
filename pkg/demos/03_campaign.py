"""A simulated measurement campaign from shots to an epsilon estimate.

Runs a null campaign and one with an injected non-linearity large enough to
wrap the main differential phase by several cycles. The shorter control run
recovers the cycle count. A final case chooses epsilon so the main phase
wraps exactly once and is invisible on its own.
"""
import math
import sys

from nlramsey.campaign import CampaignConfig, analyze_dataset, run_campaign
from nlramsey.estimator import phase_per_epsilon
from nlramsey.nonlinear import NonlinearCoupling

blocks = int(sys.argv[1]) if len(sys.argv) > 1 else 40


def show(title, cfg):
    rep = analyze_dataset(run_campaign(cfg))
    print(f"\n{title}")
    print(f"  injected epsilon  {cfg.coupling.epsilon_gamma:.4e}")
    print(f"  estimate          {rep.pooled.value:.4e} +- {rep.pooled.sigma:.2e}")
    print(f"  cycles resolved   {rep.cycles} (search +-{rep.control['cycle_search_limit']})")
    print(f"  propagated/sample {rep.uncertainty_ratio:.3f}")
    print(f"  control phase     {rep.control['delta_phi_mean']:+.3f} rad ({rep.control['significance']:.1f} sigma)")


base = CampaignConfig.reference_defaults(blocks=blocks, master_seed=2022)
show("null campaign", base)
show("injected 1e-10", CampaignConfig.reference_defaults(blocks=blocks, master_seed=2022,
                                                    coupling=NonlinearCoupling(1e-10)))
th1, th2 = base.thetas
alias = 2 * math.pi / phase_per_epsilon(th1, th2, base.tau_main, base.trap)
show("aliasing case (main phase wraps once)", CampaignConfig.reference_defaults(
    blocks=5, master_seed=2022, coupling=NonlinearCoupling(alias)))
