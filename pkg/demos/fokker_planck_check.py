"""Weak Fokker-Planck identity for the GBM example.

Bumps are placed in the bulk of the law at r = 0.625. With the derivative
term the residual is within Monte Carlo noise; dropping the second-order term
(the negative control) leaves a clear bias.
"""

from wickwz import uniform_partition
from wickwz.gbm import GbmConfig, gbm_model
from wickwz.solver import default_grid, run_ensemble
from wickwz.stats import default_bumps, fp_residual

n_paths = 20_000  # the acceptance suite uses 1e5
p = uniform_partition(4)
spec = gbm_model(GbmConfig(1.0, 0.25, p))
run = run_ensemble(spec, p, 16, n_paths, 77, default_grid(p, 16, 0.25), derivatives=True)

print(f"{'test function':40s} {'residual':>10s} {'SE':>9s}  full  control")
for phi in default_bumps(run, 0.625):
    full = fp_residual(run, phi, seed=0)
    ctrl = fp_residual(run, phi, seed=0, drop_second_order=True)
    print(f"{phi.id:40s} {full.residual:10.2e} {full.std_error:9.2e}  "
          f"{'ok' if full.passed else 'FAIL':4s}  {'ok' if ctrl.passed else 'biased'}")
