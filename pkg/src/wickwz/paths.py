"""Brownian paths on a fine grid, polygonal interpolation and Cameron-Martin shifts.

A :class:`PathSample` may hold one path (``base.shape == (N + 1,)``) or a
batch (``base.shape == (n_paths, N + 1)``); every function here broadcasts
over the leading axes.  Shifts are deterministic and therefore shared by
all paths of a batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import BadResolution, InsufficientData, OutOfRange, PartitionMismatch
from .kernels import (
    TIME_TOL,
    Direction,
    KernelSlice,
    Partition,
    StepLike,
    as_direction,
    combine,
    step_inner,
    uniform_partition,
)

DEFAULT_M = 32

_HALF_ULP = 2.0**-54
_UINT64 = 2**64


def fine_grid(p: Partition, m: int) -> np.ndarray:
    """``m`` equal cells inside every subinterval; breakpoints are exact nodes."""
    if m < 1:
        raise BadResolution(f"need at least one sub-step per subinterval, got m={m}")
    frac = np.arange(m) / m
    grid = (p.points[:-1, None] + p.deltas[:, None] * frac).ravel()
    return np.append(grid, p.T)


def gaussian_increments(keys: Iterable[tuple[int, int]], size: int) -> np.ndarray:
    """Standard normals for each ``(seed, index)`` key, one row per key.

    Each row comes from its own Philox counter stream keyed by the pair, so a
    path's noise depends only on its key and never on batch layout.
    Uniforms are mapped through the inverse normal CDF.
    """
    keys = list(keys)
    out = np.empty((len(keys), size))
    for row, (seed, index) in enumerate(keys):
        key = np.array([int(seed) % _UINT64, int(index) % _UINT64], dtype=np.uint64)
        gen = np.random.Generator(np.random.Philox(key=key))
        out[row] = gen.random(size)
    out += _HALF_ULP
    return ndtri(out)


@dataclass(frozen=True, eq=False)
class PathSample:
    partition: Partition
    m: int
    base: np.ndarray
    seed: Optional[int] = None
    index: object = None
    shift: Optional[Direction] = None

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        base.setflags(write=False)
        object.__setattr__(self, "base", base)

    @cached_property
    def fine_grid(self) -> np.ndarray:
        return fine_grid(self.partition, self.m)

    @property
    def batch_shape(self) -> tuple:
        return self.base.shape[:-1]

    @property
    def n_paths(self) -> int:
        return int(np.prod(self.batch_shape, dtype=int))

    @cached_property
    def values(self) -> np.ndarray:
        if self.shift is None:
            return self.base
        return self.base + self.shift.antiderivative(self.fine_grid)

    @cached_property
    def partition_values(self) -> np.ndarray:
        pv = self.base[..., :: self.m]
        if self.shift is not None:
            pv = pv + self.shift.antiderivative(self.partition.points)
        return pv

    @cached_property
    def partition_increments(self) -> np.ndarray:
        return np.diff(self.partition_values, axis=-1)

    def _lookup(self, times):
        grid = self.fine_grid
        times = self.partition.check_time(times)
        i = np.clip(np.searchsorted(grid, times, side="right") - 1, 0, grid.size - 2)
        w = (times - grid[i]) / (grid[i + 1] - grid[i])
        w = np.where(np.abs(times - grid[i]) <= TIME_TOL, 0.0, w)
        w = np.where(np.abs(times - grid[i + 1]) <= TIME_TOL, 1.0, w)
        return i, w

    def value_at(self, times):
        """``B`` at arbitrary times: exact at fine nodes, linear in between."""
        i, w = self._lookup(times)
        b = self.base[..., i] * (1.0 - w) + self.base[..., i + 1] * w
        if self.shift is not None:
            b = b + self.shift.antiderivative(times)
        return b

    def wiener_integral(self, g: StepLike):
        """``int g dB`` along this (possibly shifted) path.

        Exact for step functions whose knots are fine-grid nodes; the shift
        contributes the deterministic term ``<g, shift>``.
        """
        if isinstance(g, KernelSlice):
            if g.partition != self.partition:
                raise PartitionMismatch("slice and path use different partitions")
            return self.partition_increments @ g.coeffs
        g = as_direction(g)
        if g.knots.size < 2:
            return np.zeros(self.batch_shape)
        i, w = self._lookup(g.knots)
        b = self.base[..., i] * (1.0 - w) + self.base[..., i + 1] * w
        out = np.diff(b, axis=-1) @ g.values
        if self.shift is not None:
            out = out + step_inner(g, self.shift)
        return out


def _sample(p: Partition, m: int, keys: Sequence[tuple[int, int]]) -> np.ndarray:
    grid = fine_grid(p, m)
    dt = np.diff(grid)
    z = gaussian_increments(keys, dt.size)
    base = np.zeros((len(keys), grid.size))
    np.cumsum(z * np.sqrt(dt), axis=1, out=base[:, 1:])
    return base


def sample_path(p: Partition, m: int = DEFAULT_M, seed: int = 0, index: int = 0) -> PathSample:
    """One Brownian path; identical ``(seed, index)`` gives a bit-identical path."""
    fine_grid(p, m)
    return PathSample(p, m, _sample(p, m, [(seed, index)])[0], seed=seed, index=index)


def sample_paths(p: Partition, m: int = DEFAULT_M, master_seed: int = 0, n_paths: int = 1,
                 start: int = 0) -> PathSample:
    """Batch of paths ``start, ..., start + n_paths - 1`` of the ensemble ``master_seed``."""
    fine_grid(p, m)
    idx = np.arange(start, start + n_paths)
    base = _sample(p, m, [(master_seed, i) for i in idx])
    return PathSample(p, m, base, seed=master_seed, index=idx)


def zero_path(p: Partition, m: int = DEFAULT_M, n_paths: Optional[int] = None) -> PathSample:
    """Debug generator: ``B == 0`` identically."""
    grid = fine_grid(p, m)
    shape = grid.shape if n_paths is None else (n_paths, grid.size)
    return PathSample(p, m, np.zeros(shape))


def path_from_partition_values(p: Partition, values: Sequence[float], m: int = 1) -> PathSample:
    """Path whose fine values interpolate the given breakpoint values linearly."""
    values = np.asarray(values, dtype=float)
    grid = fine_grid(p, m)
    base = np.interp(grid, p.points, values)
    return PathSample(p, m, base)


def polygonal_value(ps: PathSample, t):
    p = ps.partition
    t = p.check_time(t)
    k = np.asarray(p.locate(t))
    w = (t - p.points[k]) / p.deltas[k]
    pv = ps.partition_values
    return pv[..., k] * (1.0 - w) + pv[..., k + 1] * w


def polygonal_slope(ps: PathSample, t):
    p = ps.partition
    t = np.asarray(t, dtype=float)
    if np.any(t >= p.T - TIME_TOL):
        raise OutOfRange(f"slope defined on [0, T) only, got {t}")
    k = np.asarray(p.locate(t))
    return ps.partition_increments[..., k] / p.deltas[k]


@dataclass(frozen=True)
class StochExpValue:
    exponent: np.ndarray
    value: np.ndarray


def stoch_exp(ps: PathSample, g: StepLike) -> StochExpValue:
    """``E(g) = exp(int g dB - |g|^2 / 2)`` on the path."""
    expo = ps.wiener_integral(g) - 0.5 * g.norm_sq
    return StochExpValue(expo, np.exp(expo))


def shift_path(ps: PathSample, g: StepLike, eps: float = 1.0) -> PathSample:
    """Translate the path by ``eps * int_0^. g(u) du``."""
    if eps == 0.0:
        return ps
    if isinstance(g, KernelSlice) and g.partition != ps.partition:
        raise PartitionMismatch("shift direction uses a different partition")
    g = as_direction(g)
    if g.knots.size and (g.knots[0] < -TIME_TOL or g.knots[-1] > ps.partition.T + TIME_TOL):
        raise OutOfRange("shift direction extends outside [0, T]")
    shift = combine([(1.0, ps.shift), (eps, g)])
    return replace(ps, shift=shift)


@dataclass(frozen=True)
class ConvergenceReport:
    ns: np.ndarray
    mesh: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float


def sup_polygonal_error(ps: PathSample, n: int) -> np.ndarray:
    """``sup |B^pi - B|`` over the fine grid for the uniform coarsening with ``n`` cells.

    ``ps`` must sit on a uniform partition whose cell count is a multiple of ``n``.
    """
    n_fine = ps.partition.n
    if n_fine % n:
        raise InsufficientData(f"n={n} does not divide the base partition size {n_fine}")
    step = (n_fine // n) * ps.m
    v = ps.values
    nodes = v[..., ::step]
    N = v.shape[-1] - 1
    j = np.arange(N + 1)
    k = np.minimum(j // step, n - 1)
    w = (j - k * step) / step
    poly = nodes[..., k] * (1.0 - w) + nodes[..., k + 1] * w
    return np.max(np.abs(poly - v), axis=-1)


def convergence_report(seeds: Sequence[int], ns: Sequence[int], m: int = DEFAULT_M, T: float = 1.0,
                       sampler: Optional[Callable[[Partition, int, int], PathSample]] = None) -> ConvergenceReport:
    """Monte Carlo mean of ``sup |B^pi - B|`` against the mesh, with log-log slope.

    One Brownian path per seed is drawn on the finest uniform partition
    (``max(ns)`` cells, ``m`` sub-steps each) and every coarser partition is
    interpolated from the same path.
    """
    ns = np.array(sorted(set(int(n) for n in ns)))
    if ns.size < 3:
        raise InsufficientData("need at least three partition sizes for a slope")
    if len(seeds) < 1:
        raise InsufficientData("need at least one seed")
    n_max = int(ns[-1])
    p = uniform_partition(n_max, T)
    sampler = sampler or (lambda part, mm, seed: sample_path(part, mm, seed))
    errors = np.zeros(ns.size)
    for seed in seeds:
        ps = sampler(p, m, seed)
        errors += np.array([sup_polygonal_error(ps, int(n)) for n in ns])
    errors /= len(seeds)
    mesh = T / ns
    if np.all(errors > 0):
        slope, intercept = np.polyfit(np.log(mesh), np.log(errors), 1)
    else:
        slope = intercept = float("nan")
    return ConvergenceReport(ns, mesh, errors, float(slope), float(intercept))


def write_path_csv(ps: PathSample, path) -> None:
    """Dump one path as ``t, B, B_poly`` rows."""
    if ps.batch_shape:
        raise ValueError("write_path_csv expects a single path")
    t = ps.fine_grid
    poly = polygonal_value(ps, t)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "B", "B_poly"])
        for row in zip(t, ps.values, poly):
            w.writerow([repr(float(x)) for x in row])
