"""Directional Malliavin derivatives of the Wong-Zakai solution.

Two independent routes are provided:

* :func:`dhx_closed` evaluates the closed form along an admissible direction
  ``h`` (zero mean on every subinterval),

      D_h X_t = T_{-K_{s,t}} D_h Y * exp(int_s^t b_x(r, T_{-K_{s,t}} T_{K_{s,r}} X_r) dr) * E(K_{s,t});

* :func:`dhx_fd` and :func:`deta_x` differentiate the solution map along a
  Cameron-Martin shift with central differences, for any step direction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_simpson

from .errors import BadStep, DegenerateInit, NoDerivatives, OutOfRange, SigmaUnsupported
from .kernels import (
    TIME_TOL,
    Direction,
    StepLike,
    combine,
    eta_direction,
    kernel_slice,
    make_haar_direction,
    step_inner,
)
from .paths import PathSample, shift_path, stoch_exp
from .solver import EnsembleRun, ModelSpec, integrate_z, node_indices, reconstruct_x

DEFAULT_EPS = 1e-4


def _check_eps(eps):
    if not eps > 0:
        raise BadStep(f"finite-difference step must be positive, got {eps}")


def dhx_closed(ps: PathSample, spec: ModelSpec, h: StepLike, t: float):
    p = ps.partition
    if not spec.unit_sigma():
        raise SigmaUnsupported("the closed form holds for sigma == 1 only")
    if spec.init.kind == "deterministic":
        raise DegenerateInit("deterministic initial data has D_h Y = 0")
    if abs(step_inner(spec.init.direction, h)) <= 1e-14 * np.sqrt(spec.init.direction.norm_sq * h.norm_sq):
        raise DegenerateInit("the initial direction is orthogonal to h, so D_h Y = 0")
    if t < spec.s - TIME_TOL:
        raise OutOfRange(f"t={t} precedes s={spec.s}")
    K = kernel_slice(p, spec.s, t)
    shifted = shift_path(ps, K, -1.0)
    dy = spec.init.derivative(shifted, h)
    # on the path shifted by -K_{s,t}, Z_r / E(-K_{s,r}) is exactly the doubly shifted X_r
    _, bx_int, _ = integrate_z(shifted, spec, [t], with_bx=True)
    return dy * np.exp(bx_int[..., 0]) * stoch_exp(ps, K).value


def doubly_shifted_x(ps: PathSample, spec: ModelSpec, t: float, r_times):
    """``T_{-K_{s,t}} T_{K_{s,r}} X_r`` for every ``r`` in ``r_times``, from one solve."""
    K = kernel_slice(ps.partition, spec.s, t)
    return integrate_z(shift_path(ps, K, -1.0), spec, r_times)[2]


def doubly_shifted_x_reference(ps: PathSample, spec: ModelSpec, t: float, r: float):
    """Same quantity by re-solving on the path shifted by ``K_{s,r} - K_{s,t}``."""
    p = ps.partition
    net = combine([(1.0, kernel_slice(p, spec.s, r)), (-1.0, kernel_slice(p, spec.s, t))])
    return reconstruct_x(shift_path(ps, net, 1.0), spec, r)


def shift_derivative(ps: PathSample, functional, g: StepLike, eps: float):
    """Central difference of ``functional(path)`` along the shift ``eps * int g``."""
    _check_eps(eps)
    plus = functional(shift_path(ps, g, eps))
    minus = functional(shift_path(ps, g, -eps))
    return (plus - minus) / (2.0 * eps)


def dhx_fd(ps: PathSample, spec: ModelSpec, h: StepLike, t: float, eps: float = DEFAULT_EPS):
    """Shift derivative of ``X_t`` along ``h``; no admissibility needed."""
    return shift_derivative(ps, lambda q: reconstruct_x(q, spec, t), h, eps)


def fd_richardson(ps: PathSample, spec: ModelSpec, h: StepLike, t: float, eps: float = DEFAULT_EPS):
    """``dhx_fd`` at ``eps`` plus the change when the step is halved once."""
    full = dhx_fd(ps, spec, h, t, eps)
    half = dhx_fd(ps, spec, h, t, eps / 2.0)
    return half, np.abs(full - half)


@dataclass(frozen=True)
class FdOrderReport:
    eps: np.ndarray
    errors: np.ndarray
    used: np.ndarray
    slope: float


def fd_order(ps: PathSample, spec: ModelSpec, h: StepLike, t: float,
             eps_list=(1e-2, 1e-3, 1e-4, 1e-5), floor_factor: float = 100.0) -> FdOrderReport:
    """Log-log slope of the mean relative FD error against ``eps``.

    Steps whose error sits within ``floor_factor`` of the cancellation floor
    ``machine_eps / eps`` are excluded from the fit.
    """
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    closed = dhx_closed(ps, spec, h, t)
    errors = np.array([np.mean(np.abs(dhx_fd(ps, spec, h, t, e) / closed - 1.0)) for e in eps])
    used = errors > floor_factor * np.finfo(float).eps / eps
    if used.sum() >= 2:
        slope = float(np.polyfit(np.log(eps[used]), np.log(errors[used]), 1)[0])
    else:
        slope = float("nan")
    return FdOrderReport(eps, errors, used, slope)


def deta_x(ps: PathSample, spec: ModelSpec, r: float, eps: float = DEFAULT_EPS, side: str = "right"):
    """``D_{eta_r} X_r`` with ``eta_r = d/dr K_r``, by central shift differences."""
    _check_eps(eps)
    p = ps.partition
    if r < spec.s - TIME_TOL or (side == "right" and r >= p.T - TIME_TOL):
        raise OutOfRange(f"r={r} outside [s, T)")
    return dhx_fd(ps, spec, eta_direction(p, r, side), r, eps)


def haar_closed_form_available(spec: ModelSpec, h: Direction) -> bool:
    if not spec.unit_sigma() or spec.init.kind == "deterministic":
        return False
    return abs(step_inner(spec.init.direction, h)) > 1e-14 * np.sqrt(spec.init.direction.norm_sq * h.norm_sq)


def ensemble_derivatives(ps: PathSample, spec: ModelSpec, grid, eps: float = DEFAULT_EPS) -> dict:
    """Per-path ``dhx`` (Haar, closed form) and ``deta``/``deta_left`` on ``grid``."""
    p = ps.partition
    grid = np.asarray(grid, dtype=float)
    shape = ps.batch_shape + (grid.size,)
    h = make_haar_direction(p)
    dhx = None
    if haar_closed_form_available(spec, h):
        dhx = np.stack([dhx_closed(ps, spec, h, float(t)) for t in grid], axis=-1)
    deta = np.full(shape, np.nan)
    left = np.full(shape, np.nan)
    for j, t in enumerate(grid):
        if t < p.T - TIME_TOL:
            deta[..., j] = deta_x(ps, spec, float(t), eps)
        at_break = p.is_breakpoint(t) and t > spec.s + TIME_TOL
        if at_break:
            left[..., j] = deta_x(ps, spec, float(t), eps, side="left")
        else:
            left[..., j] = deta[..., j]
    return {"dhx": dhx, "deta": deta, "deta_left": left}


@dataclass(frozen=True)
class InverseMomentReport:
    q: float
    estimate: float
    ci_low: float
    ci_high: float
    std_error: float
    min_abs_derivative: float
    trim: float
    n_samples: int
    nondegenerate: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def inverse_moment(run: Union[EnsembleRun, np.ndarray], q: float, trim: float = 0.01, t: Optional[float] = None,
                   n_boot: int = 200, seed: int = 0) -> InverseMomentReport:
    """Trimmed Monte Carlo estimate of ``E |D_h X_t|^{-q}`` with a bootstrap CI.

    ``trim`` is the fraction cut from each tail (``scipy.stats.trim_mean``).
    The minimum ``|D_h X_t|`` is reported as a nondegeneracy witness.
    """
    if not q >= 0:
        raise ValueError("q must be nonnegative")
    if not 0.0 <= trim < 0.5:
        raise ValueError("trim must lie in [0, 0.5)")
    if isinstance(run, EnsembleRun):
        if run.dhx is None:
            raise NoDerivatives("the ensemble carries no D_h X samples")
        j = run.grid.size - 1 if t is None else run.time_index(t)
        d = run.dhx[:, j]
    else:
        d = np.asarray(run, dtype=float).ravel()
        if d.size == 0:
            raise NoDerivatives("no derivative samples")
    a = np.abs(d)
    with np.errstate(divide="ignore"):
        vals = a ** (-float(q))
    min_abs = float(a.min())
    estimate = float(stats.trim_mean(vals, trim))
    if np.all(np.isfinite(vals)) and vals.size > 1 and np.ptp(vals) > 0:
        res = stats.bootstrap((vals,), lambda x, axis: stats.trim_mean(x, trim, axis=axis), n_resamples=n_boot,
                              method="percentile", random_state=np.random.default_rng(seed), batch=20)
        lo, hi = res.confidence_interval
        se = float(res.standard_error)
    else:
        lo = hi = estimate
        se = 0.0 if np.all(np.isfinite(vals)) else float("inf")
    return InverseMomentReport(float(q), estimate, float(lo), float(hi), se, min_abs, float(trim), int(a.size),
                               bool(min_abs > 0.0))


@dataclass(frozen=True)
class DxResidual:
    grid: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    terms: dict
    residual: np.ndarray

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def dx_equation_residual(ps: PathSample, spec: ModelSpec, eta: StepLike, grid, eps: float = 1e-3) -> DxResidual:
    """Check the linear equation satisfied by ``D_eta X`` on a single path.

    Left side ``D_eta X_t``; right side

        D_eta Y + int b_x(X) D_eta X dr + int (D_eta X) <> dB^pi_r dr + int X_r <d/dr K_r, eta> dr,

    with the Wick term expanded as ``D_eta X * dB^pi/dr - D_{d/dr K_r} D_eta X``
    (nested central differences).  Time integrals use composite Simpson per
    subinterval with one-sided limits at breakpoints.
    """
    _check_eps(eps)
    if not spec.unit_sigma():
        raise SigmaUnsupported("the derivative equation is implemented for sigma == 1")
    if ps.batch_shape:
        raise ValueError("dx_equation_residual works on a single path")
    p = ps.partition
    grid = np.asarray(grid, dtype=float)
    t_end = float(grid.max())
    nodes = ps.fine_grid[node_indices(ps, [spec.s])[0]:node_indices(ps, [t_end])[0] + 1]
    b_x = spec.drift.b_x

    def x_at(r):
        return lambda q: reconstruct_x(q, spec, r)

    def d_eta(q, r):
        return shift_derivative(q, x_at(r), eta, eps)

    x = np.array([reconstruct_x(ps, spec, r) for r in nodes])
    dx = np.array([d_eta(ps, r) for r in nodes])
    dy = shift_derivative(ps, spec.init.evaluate, eta, eps)

    def sided(r, side):
        eta_r = eta_direction(p, r, side)
        k = p.locate(r) if side == "right" else p.locate(max(r - 2 * TIME_TOL, 0.0))
        slope = ps.partition_increments[k] / p.deltas[k]
        nested = shift_derivative(ps, lambda q: d_eta(q, r), eta_r, eps)
        return slope, nested, step_inner(eta_r, eta)

    bx_term = np.zeros(nodes.size)
    wick = np.zeros(nodes.size)
    nonhom = np.zeros(nodes.size)
    # integrate segment by segment so the jumps at breakpoints are handled by one-sided values
    seg_edges = np.unique(np.concatenate([[nodes[0]], p.points[(p.points > nodes[0]) & (p.points < nodes[-1])],
                                          [nodes[-1]]]))
    start_val = {"bx": 0.0, "wick": 0.0, "nonhom": 0.0}
    for a, b in zip(seg_edges[:-1], seg_edges[1:]):
        idx = np.flatnonzero((nodes >= a - TIME_TOL) & (nodes <= b + TIME_TOL))
        r = nodes[idx]
        f_bx = b_x(x[idx]) * dx[idx]
        f_wick = np.empty(idx.size)
        f_non = np.empty(idx.size)
        for j, rr in enumerate(r):
            side = "left" if j == idx.size - 1 and p.is_breakpoint(rr) else "right"
            if side == "right" and rr >= p.T - TIME_TOL:
                side = "left"
            slope, nested, pairing = sided(rr, side)
            f_wick[j] = dx[idx[j]] * slope - nested
            f_non[j] = x[idx[j]] * pairing
        for name, f, out in (("bx", f_bx, bx_term), ("wick", f_wick, wick), ("nonhom", f_non, nonhom)):
            cum = cumulative_simpson(f, x=r, initial=0.0) if r.size > 2 else np.concatenate(
                [[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(r))])
            out[idx] = start_val[name] + cum
            start_val[name] = out[idx[-1]]

    keep = node_indices(ps, grid) - node_indices(ps, [spec.s])[0]
    lhs = dx[keep]
    rhs = dy + bx_term[keep] + wick[keep] + nonhom[keep]
    terms = {"d_eta_y": np.full(keep.size, float(dy)), "drift": bx_term[keep], "wick": wick[keep],
             "nonhomogeneous": nonhom[keep]}
    return DxResidual(grid, lhs, rhs, terms, lhs - rhs)


def write_derivative_csv(path, rows) -> None:
    """Rows of ``(path_id, t, dhx_closed, dhx_fd, eps)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t", "dhx_closed", "dhx_fd", "eps"])
        for row in rows:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
