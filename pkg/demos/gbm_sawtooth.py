"""The sawtooth factor of the GBM example.

For dX = X dB the Wick-type approximation has derivative X_t xi(t) along the
kernel's time derivative. The exact diffusion would give the constant 1/2; the
approximation gives a sawtooth that only averages to 1/2 on each subinterval.
"""

import numpy as np

from wickwz import uniform_partition
from wickwz.gbm import fp_operator_compare

p = uniform_partition(4)
t = np.linspace(0.0, 1.0, 17)
cmp = fp_operator_compare(p, 0.0, t)

print("   t      xi   running avg")
for row in zip(cmp.t, cmp.xi, cmp.running_avg):
    print("{:6.4f}  {:6.4f}  {:8.4f}".format(*row))
print("sup |xi - 1/2|            :", cmp.sup_deviation)
print("running average at breaks :", cmp.breakpoint_running_avg)
print("per-interval averages     :", cmp.interval_averages)
