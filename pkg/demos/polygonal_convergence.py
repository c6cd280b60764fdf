"""Sup-norm distance between Brownian motion and its polygonal interpolation.

The error decays like sqrt(log n / n); over n = 4..256 the fitted log-log
slope comes out a little above 0.4 because of the log factor.
"""

from wickwz.paths import convergence_report

rep = convergence_report(list(range(200)), [4, 8, 16, 32, 64, 128, 256], m=32)
for n, e in zip(rep.ns, rep.errors):
    print(f"n={n:4d}  E sup|B - B^pi| = {e:.4f}")
print(f"slope {rep.slope:.4f}")
