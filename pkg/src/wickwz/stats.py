"""Ensemble statistics: densities, the coefficient g, weak Fokker-Planck residuals
and mean preservation.

Everything here reads an :class:`~wickwz.solver.EnsembleRun` (or plain sample
arrays) and never mutates it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import (
    EmptyBins,
    NoDerivatives,
    SupportOutOfRange,
    TooFewSamples,
    UnsupportedTestFunction,
    WrongModel,
)
from .kernels import TIME_TOL, kernel_slice
from .paths import PathSample, polygonal_value
from .solver import EnsembleRun

MIN_KDE_SAMPLES = 100
DEFAULT_BINS = 64
DEFAULT_MIN_COUNT = 50
N_BOOT = 200


# ---------------------------------------------------------------- density

@dataclass(frozen=True)
class DensityEstimate:
    t: Optional[float]
    grid_x: np.ndarray
    density: np.ndarray
    bandwidth: float

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid_x))


def silverman_bandwidth(samples) -> float:
    """``0.9 * min(std, IQR / 1.34) * n^(-1/5)``."""
    x = np.asarray(samples, dtype=float)
    sd = np.std(x, ddof=1)
    iqr = stats.iqr(x) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return float(0.9 * spread * x.size ** -0.2)


def kde_density(samples, bandwidth: Optional[float] = None, grid_x=None, t: Optional[float] = None,
                n_grid: int = 512) -> DensityEstimate:
    """Gaussian kernel density estimate (Silverman bandwidth by default)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_KDE_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_KDE_SAMPLES} samples, got {x.size}")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if grid_x is None:
        lo, hi = x.min() - 4 * h, x.max() + 4 * h
        grid_x = np.linspace(lo, hi, n_grid)
    grid_x = np.asarray(grid_x, dtype=float)
    kde = stats.gaussian_kde(x, bw_method=h / np.std(x, ddof=1))
    return DensityEstimate(t, grid_x, np.maximum(kde(grid_x), 0.0), h)


def l1_distance(est: DensityEstimate, pdf) -> float:
    """Trapezoid ``int |p_hat - p|`` over the estimate's grid."""
    return float(np.trapezoid(np.abs(est.density - pdf(est.grid_x)), est.grid_x))


def write_density_csv(path, estimates: Sequence[DensityEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "p"])
        for est in estimates:
            for x, d in zip(est.grid_x, est.density):
                w.writerow([repr(float(est.t)), repr(float(x)), repr(float(d))])


# ---------------------------------------------------------------- g regression

@dataclass(frozen=True)
class GEstimate:
    """Binned conditional mean ``m(x) = E[D_eta X_r | X_r in bin]``.

    ``reported`` marks bins with at least ``min_count`` samples; the other
    bins keep their raw statistics but should not be read as estimates.
    """

    t: Optional[float]
    edges: np.ndarray
    means: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    x_mean: np.ndarray
    reported: np.ndarray
    n_samples: int

    @property
    def bins(self) -> np.ndarray:
        return np.column_stack([self.edges[:-1], self.edges[1:]])

    def mass(self) -> np.ndarray:
        return self.counts / self.n_samples

    def tower_mean(self) -> float:
        """``sum count * m / n`` over all nonempty bins."""
        ok = self.counts > 0
        return float(np.sum(self.counts[ok] * self.means[ok]) / self.n_samples)

    def moment(self, q: float) -> float:
        """``sum |m|^q * count / n`` over reported bins."""
        ok = self.reported
        return float(np.sum(np.abs(self.means[ok]) ** q * self.counts[ok]) / self.n_samples)


def regress_g(x_samples, deta_samples, n_bins: int = DEFAULT_BINS, min_count: int = DEFAULT_MIN_COUNT,
              t: Optional[float] = None) -> GEstimate:
    """Equal-width binned regression of the derivative samples on ``X``."""
    x = np.asarray(x_samples, dtype=float).ravel()
    d = np.asarray(deta_samples, dtype=float).ravel()
    if x.shape != d.shape:
        raise ValueError("x and derivative samples must be paired")
    if x.size < 2:
        raise TooFewSamples("need at least two paired samples")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=d, minlength=n_bins)
    sq = np.bincount(idx, weights=d * d, minlength=n_bins)
    xs = np.bincount(idx, weights=x, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts
        var = np.maximum(sq / counts - means ** 2, 0.0) * counts / np.maximum(counts - 1, 1)
        stderr = np.sqrt(var / counts)
        x_mean = xs / counts
    reported = counts >= min_count
    if not reported.any():
        raise EmptyBins(f"no bin holds {min_count} samples")
    return GEstimate(t, edges, means, stderr, counts, x_mean, reported, int(x.size))


def regress_run(run: EnsembleRun, r: float, **kw) -> GEstimate:
    if run.deta is None:
        raise NoDerivatives("the ensemble carries no D_eta X samples")
    j = run.time_index(r)
    return regress_g(run.x[:, j], run.deta[:, j], t=r, **kw)


def write_g_csv(path, estimates: Sequence[GEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "bin_lo", "bin_hi", "m", "stderr", "count"])
        for est in estimates:
            for k in np.flatnonzero(est.reported):
                w.writerow([repr(float(est.t)), repr(float(est.edges[k])), repr(float(est.edges[k + 1])),
                            repr(float(est.means[k])), repr(float(est.stderr[k])), int(est.counts[k])])


# ---------------------------------------------------------------- test functions

def _bump(tau):
    """``psi, psi', psi''`` for ``psi(tau) = exp(-1 / (1 - tau^2))`` on ``|tau| < 1``."""
    tau = np.asarray(tau, dtype=float)
    inside = np.abs(tau) < 1.0
    u = np.where(inside, 1.0 - tau * tau, 1.0)
    psi = np.where(inside, np.exp(-1.0 / u), 0.0)
    a1 = -2.0 * tau / u ** 2
    a2 = -2.0 / u ** 2 - 8.0 * tau * tau / u ** 3
    d1 = np.where(inside, psi * a1, 0.0)
    d2 = np.where(inside, psi * (a1 * a1 + a2), 0.0)
    return psi, d1, d2


@dataclass(frozen=True)
class BumpFunction:
    """Product of smooth compactly supported bumps in ``t`` and ``x``."""

    center_t: float
    width_t: float
    center_x: float
    width_x: float

    @property
    def id(self) -> str:
        return f"bump(t={self.center_t:g}+-{self.width_t:g},x={self.center_x:g}+-{self.width_x:g})"

    @property
    def t_support(self) -> tuple:
        return self.center_t - self.width_t, self.center_t + self.width_t

    def _parts(self, t, x):
        pt, dpt, _ = _bump((np.asarray(t, dtype=float) - self.center_t) / self.width_t)
        px, dpx, ddpx = _bump((np.asarray(x, dtype=float) - self.center_x) / self.width_x)
        return pt, dpt / self.width_t, px, dpx / self.width_x, ddpx / self.width_x ** 2

    def value(self, t, x):
        pt, _, px, _, _ = self._parts(t, x)
        return pt * px

    def dt(self, t, x):
        _, dpt, px, _, _ = self._parts(t, x)
        return dpt * px

    def dx(self, t, x):
        pt, _, _, dpx, _ = self._parts(t, x)
        return pt * dpx

    def dxx(self, t, x):
        pt, _, _, _, ddpx = self._parts(t, x)
        return pt * ddpx


@dataclass(frozen=True)
class ZeroFunction:
    """``phi == 0``; a trivial member of the test-function family."""

    id: str = "zero"
    t_support: tuple = (float("nan"), float("nan"))

    def value(self, t, x):
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)

    dt = dx = dxx = value


def make_bump(center_t: float, width_t: float, center_x: float, width_x: float,
              t_range: Optional[tuple] = None) -> BumpFunction:
    """Bump with support ``|t - center_t| < width_t``, ``|x - center_x| < width_x``.

    With ``t_range = (s, T)`` the time support must sit strictly inside it.
    """
    if not (width_t > 0 and width_x > 0):
        raise ValueError("bump widths must be positive")
    phi = BumpFunction(float(center_t), float(width_t), float(center_x), float(width_x))
    if t_range is not None:
        lo, hi = phi.t_support
        if lo <= t_range[0] + TIME_TOL or hi >= t_range[1] - TIME_TOL:
            raise SupportOutOfRange(f"time support [{lo}, {hi}] must lie inside ({t_range[0]}, {t_range[1]})")
    return phi


# ---------------------------------------------------------------- weak identity

@dataclass(frozen=True)
class ResidualReport:
    test_function_id: str
    residual: float
    std_error: float
    n_paths: int
    drop_second_order: bool = False

    @property
    def passed(self) -> bool:
        return abs(self.residual) <= 3.0 * self.std_error

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _segments(p, grid):
    """Index ranges of ``grid`` lying in one subinterval each (endpoints shared)."""
    cuts = [0]
    for j in range(1, grid.size - 1):
        if p.is_breakpoint(grid[j]):
            cuts.append(j)
    cuts.append(grid.size - 1)
    return list(zip(cuts[:-1], cuts[1:]))


def fp_integrand_paths(run: EnsembleRun, phi, drop_second_order: bool = False) -> np.ndarray:
    """Per-path ``int_s^T (phi_t + phi_x b + phi_xx X D_eta X)(r, X_r) dr``.

    Trapezoid in ``r`` per subinterval: right limits of ``D_eta X`` at the
    left end of a segment, left limits at its right end.
    """
    if run.deta is None or run.deta_left is None:
        raise NoDerivatives("the weak identity needs D_eta X samples")
    p = run.partition
    g = run.grid
    b = run.spec.drift.b

    def f(j, deta):
        t, x = g[j], run.x[:, j]
        out = phi.dt(t, x) + phi.dx(t, x) * b(x)
        if not drop_second_order:
            d2 = phi.dxx(t, x)
            # outside the support the derivative sample may be nan at t = T; it is multiplied by 0
            out = out + np.where(d2 != 0.0, d2 * x * np.nan_to_num(deta), 0.0)
        return out

    total = np.zeros(run.n_paths)
    for a, c in _segments(p, g):
        vals = [f(j, run.deta[:, j]) for j in range(a, c)] + [f(c, run.deta_left[:, c])]
        total += np.trapezoid(np.array(vals), g[a:c + 1], axis=0)
    return total


def fp_residual(run: EnsembleRun, phi, n_boot: int = N_BOOT, seed: int = 0,
                drop_second_order: bool = False) -> ResidualReport:
    """Monte Carlo estimate of ``0 = int_s^T E[phi_t + phi_x b + phi_xx X D_eta X] dr``."""
    s, T = run.spec.s, run.partition.T
    lo, hi = phi.t_support
    if isinstance(phi, BumpFunction) and (lo <= s + TIME_TOL or hi >= T - TIME_TOL):
        raise UnsupportedTestFunction(f"time support [{lo}, {hi}] touches the boundary of ({s}, {T})")
    vals = fp_integrand_paths(run, phi, drop_second_order)
    mean = float(np.mean(vals))
    if vals.size > 1 and np.ptp(vals) > 0:
        res = stats.bootstrap((vals,), np.mean, n_resamples=n_boot, method="percentile",
                              random_state=np.random.default_rng(seed), vectorized=True)
        se = float(res.standard_error)
    else:
        se = 0.0
    return ResidualReport(phi.id, mean, se, int(vals.size), drop_second_order)


def default_bumps(run: EnsembleRun, r_center: float, n: int = 5, width_t: float = None) -> list:
    """``n`` bumps across the sample bulk of ``X`` at time ``r_center``."""
    p = run.partition
    width_t = width_t or 0.5 * min(r_center - run.spec.s, p.T - r_center)
    x = run.x[:, run.time_index(r_center)]
    qs = np.quantile(x, np.linspace(0.2, 0.8, n))
    wx = 0.5 * (np.quantile(x, 0.9) - np.quantile(x, 0.1))
    return [make_bump(r_center, width_t, float(c), float(wx), (run.spec.s, p.T)) for c in qs]


def write_fp_report(path, reports: Sequence[ResidualReport]) -> None:
    doc = {"reports": [r.to_dict() for r in reports], "all_passed": all(r.passed for r in reports)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------- mean preservation

@dataclass(frozen=True)
class MeanReport:
    grid: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    x0: float
    n_paths: int
    low_power: bool
    passed: np.ndarray = field(repr=False)

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    def to_dict(self) -> dict:
        return {"x0": self.x0, "n_paths": self.n_paths, "low_power": self.low_power,
                "all_passed": self.all_passed,
                "rows": [{"t": float(t), "mean": float(m), "std_error": float(e), "pass": bool(ok)}
                         for t, m, e, ok in zip(self.grid, self.mean, self.std_error, self.passed)]}


def mean_band(samples, x0: float, grid=None) -> MeanReport:
    """Sample mean per column with a ``3 * SE`` band around ``x0``."""
    a = np.asarray(samples, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    n = a.shape[0]
    mean = a.mean(axis=0)
    if n > 1:
        se = a.std(axis=0, ddof=1) / np.sqrt(n)
        ok = np.abs(mean - x0) <= 3.0 * se
    else:
        se = np.full(mean.shape, np.inf)
        ok = np.ones(mean.shape, dtype=bool)
    grid = np.arange(a.shape[1], dtype=float) if grid is None else np.asarray(grid, dtype=float)
    return MeanReport(grid, mean, se, float(x0), int(n), n < 30, ok)


def mean_preservation(run: EnsembleRun, x0: float) -> MeanReport:
    """Per-time check of ``E[X_t] = x0`` for zero drift and deterministic start."""
    if run.spec.drift.id != "zero":
        raise WrongModel(f"mean preservation needs zero drift, got {run.spec.drift.id}")
    if run.spec.init.kind != "deterministic":
        raise WrongModel("mean preservation needs a deterministic initial value")
    return mean_band(run.x, x0, run.grid)


def naive_samples(ps: PathSample, x0: float, t) -> np.ndarray:
    """``x0 * exp(B^pi_t - t / 2)``: the polygonal path plugged into the exact formula."""
    t = np.asarray(t, dtype=float)
    return x0 * np.exp(polygonal_value(ps, t) - 0.5 * t)


def naive_mean(p, x0: float, t: float) -> float:
    """Exact mean ``x0 * exp((|K_{0,t}|^2 - t) / 2)`` of the naive comparator."""
    return float(x0 * np.exp(0.5 * (kernel_slice(p, 0.0, t).norm_sq - t)))


def write_mean_report(path, report: MeanReport, extra: Optional[dict] = None) -> None:
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
