"""Wick products preserve the mean; ordinary products do not.

With zero drift and deterministic x0 the Wick-type approximation has mean x0
at every time. The naive Wong-Zakai exponential exp(W(K) - t/2) drifts to
E exp((|K|^2 - t)/2), which is below 1 away from breakpoints.
"""

from wickwz import sample_paths, uniform_partition
from wickwz.solver import default_grid, deterministic, make_drift, model, run_ensemble
from wickwz.stats import mean_band, mean_preservation, naive_mean, naive_samples

p = uniform_partition(4)
run = run_ensemble(model(make_drift("zero"), deterministic(1.0)), p, 32, 50_000, 5, default_grid(p, 32, 0.0, 8))
rep = mean_preservation(run, 1.0)
for t, m, se in zip(rep.grid, rep.mean, rep.std_error):
    print(f"wick  t={t:6.4f}  mean {m:.4f}  SE {se:.4f}")

ps = sample_paths(p, 32, 6, 50_000)
for t in (0.125, 0.375, 0.5):
    x = naive_samples(ps, 1.0, t)
    band = mean_band(x, 1.0)
    print(f"naive t={t:5.3f}  mean {x.mean():.4f}  predicted {naive_mean(p, 1.0, t):.4f}  SE {band.std_error[0]:.4f}")
