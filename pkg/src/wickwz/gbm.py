"""The zero-drift example ``dX = X dB`` in closed form.

With ``Y = x0 E(1_{[0,s)})`` at a breakpoint ``s`` the Wick-type approximation is

    X_t = x0 E(1_{[0,s)} + K_{s,t}),

its derivative along ``eta_t = d/dt K_t`` is ``X_t xi(t)`` with the sawtooth
``xi(t) = (t - t_k) / dt_k``, and the exact solution is ``x0 exp(B_t - t / 2)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import OutOfRange
from .kernels import TIME_TOL, Partition, kernel_slice
from .paths import PathSample
from .solver import ModelSpec, gbm_indicator_init, make_drift, model


@dataclass(frozen=True)
class GbmConfig:
    x0: float
    s: float
    partition: Partition

    def __post_init__(self):
        if self.x0 == 0:
            raise ValueError("x0 must be nonzero")
        _check_s(self.partition, self.s)


def _check_s(p: Partition, s: float) -> None:
    if not (-TIME_TOL <= s < p.T - TIME_TOL) or not p.is_breakpoint(s):
        raise OutOfRange(f"s={s} must be a breakpoint of the partition below T")


def gbm_model(cfg: GbmConfig) -> ModelSpec:
    """Solver spec reproducing the example: zero drift, ``Y = x0 E(1_{[0,s)})``."""
    return model(make_drift("zero"), gbm_indicator_init(cfg.x0, cfg.s), s=cfg.s)


def log_variance(cfg: GbmConfig, t: float) -> float:
    """``|1_{[0,s)} + K_{s,t}|^2 = s + |K_{s,t}|^2`` (disjoint supports)."""
    return cfg.s + kernel_slice(cfg.partition, cfg.s, t).norm_sq


def gbm_wz(ps: PathSample, cfg: GbmConfig, t: float):
    p = cfg.partition
    if not (cfg.s - TIME_TOL <= t <= p.T + TIME_TOL):
        raise OutOfRange(f"t={t} outside [{cfg.s}, {p.T}]")
    K = kernel_slice(p, cfg.s, t)
    # s is a breakpoint, so B_s equals the polygonal value there
    expo = ps.value_at(cfg.s) + ps.wiener_integral(K) - 0.5 * (cfg.s + K.norm_sq)
    return cfg.x0 * np.exp(expo)


def gbm_exact(ps: PathSample, x0: float, t):
    t = ps.partition.check_time(t)
    return x0 * np.exp(ps.value_at(t) - 0.5 * t)


def xi_pi(p: Partition, s: float, t, side: str = "right"):
    """``<1_{[0,s)} + K_{s,t}, d/dt K_t>`` in closed form.

    ``side="left"`` returns left limits and admits ``t = T``.
    """
    _check_s(p, s)
    t = np.asarray(t, dtype=float)
    hi_ok = t <= p.T + TIME_TOL if side == "left" else t < p.T - TIME_TOL
    if np.any(t < s - TIME_TOL) or not np.all(hi_ok):
        raise OutOfRange(f"t outside [s, T{']' if side == 'left' else ')'}")
    k = np.asarray(p.locate(t))
    if side == "left":
        at_break = np.isclose(t, p.points[k], rtol=0.0, atol=TIME_TOL) & (k > 0)
        k = np.where(at_break, k - 1, k)
    lo, d = p.points[k], p.deltas[k]
    overlap = np.clip(np.minimum(s, lo + d) - lo, 0.0, None) / d
    # value of K_{s,t} on the cell holding t
    coef = np.clip((t - lo) / d, 0.0, 1.0) - np.clip((s - lo) / d, 0.0, 1.0)
    return overlap + coef


def xi_running_average(p: Partition, s: float, t):
    """``(1 / (t - s)) int_s^t xi``; exact, since ``xi`` is linear on each subinterval."""
    _check_s(p, s)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.full(t.shape, np.nan)
    for i, tt in enumerate(t):
        if tt <= s + TIME_TOL:
            continue
        total = 0.0
        for k in range(p.locate(s), p.n):
            a, b = p.points[k], min(p.points[k + 1], tt)
            if b <= a:
                break
            total += (b - a) ** 2 / (2.0 * p.deltas[k])
        out[i] = total / (tt - s)
    return out


def interval_averages(p: Partition, s: float = 0.0) -> np.ndarray:
    """``(1 / dt_k) int_{I_k} xi`` for every subinterval after ``s``."""
    _check_s(p, s)
    k0 = p.locate(s)
    # xi runs linearly from 0 to 1 across each cell
    return np.array([(p.deltas[k] / 2.0) / p.deltas[k] for k in range(k0, p.n)])


@dataclass(frozen=True)
class OperatorComparison:
    t: np.ndarray
    xi: np.ndarray
    running_avg: np.ndarray
    sup_deviation: float
    breakpoint_running_avg: np.ndarray
    interval_averages: np.ndarray


def fp_operator_compare(p: Partition, s: float, t_grid) -> OperatorComparison:
    """Tabulate ``xi`` against the constant ``1/2`` of the exact diffusion coefficient.

    Points at ``T`` use the left limit; the sup deviation includes left limits
    at interior breakpoints.
    """
    t = np.asarray(t_grid, dtype=float)
    right = t < p.T - TIME_TOL
    xi = np.empty(t.shape)
    xi[right] = xi_pi(p, s, t[right])
    xi[~right] = xi_pi(p, s, t[~right], side="left")
    left = xi_pi(p, s, t[t > s + TIME_TOL], side="left")
    sup = float(max(np.max(np.abs(xi - 0.5)), np.max(np.abs(left - 0.5), initial=0.0)))
    bps = p.points[p.points > s + TIME_TOL]
    return OperatorComparison(t, xi, xi_running_average(p, s, t), sup, xi_running_average(p, s, bps),
                              interval_averages(p, s))


def write_gbm_demo_csv(path, cmp: OperatorComparison) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "xi", "running_avg"])
        for row in zip(cmp.t, cmp.xi, cmp.running_avg):
            w.writerow([repr(float(v)) for v in row])
