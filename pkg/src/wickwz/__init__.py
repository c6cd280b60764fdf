"""Wick-type Wong-Zakai approximations of Ito SDEs driven by polygonal Brownian paths.

Modules: :mod:`kernels` (partitions, kernels, directions), :mod:`paths`
(Brownian samples and shifts), :mod:`solver` (reduction and RK4),
:mod:`malliavin` (directional derivatives), :mod:`stats` (law diagnostics),
:mod:`gbm` (closed-form example) and :mod:`cli`.
"""

from .errors import WickWZError
from .kernels import (
    Direction,
    KernelSlice,
    Partition,
    check_direction,
    eta_direction,
    inner_product,
    kernel_slice,
    make_haar_direction,
    make_partition,
    uniform_partition,
)
from .paths import PathSample, sample_path, sample_paths, shift_path, zero_path
from .solver import (
    EnsembleRun,
    ModelSpec,
    deterministic,
    lognormal_exp,
    make_drift,
    model,
    reconstruct_x,
    run_ensemble,
    solve,
)
from .malliavin import deta_x, dhx_closed, dhx_fd, inverse_moment

__version__ = "0.1.0"
