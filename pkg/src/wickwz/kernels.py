"""Partitions, polygonal kernels and step-function directions.

Every function of ``u`` handled here is a step function: the polygonal
kernel ``K_t(u)`` is constant in ``u`` on each subinterval of the partition,
with value ``clip((t - t_j) / dt_j, 0, 1)`` on ``[t_j, t_{j+1})``.  Inner
products, antiderivatives and Wiener integrals are therefore exact finite
sums; no quadrature is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    NotSorted,
    OutOfRange,
    PartitionMismatch,
    TooFewPoints,
    WrongEndpoints,
)

TIME_TOL = 1e-12


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Partition:
    """Ordered breakpoints ``0 = t_0 < t_1 < ... < t_n = T``."""

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _readonly(self.points))

    @property
    def T(self) -> float:
        return float(self.points[-1])

    @property
    def n(self) -> int:
        return len(self.points) - 1

    @cached_property
    def deltas(self) -> np.ndarray:
        return _readonly(np.diff(self.points))

    @property
    def mesh(self) -> float:
        return float(self.deltas.max())

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self is other or np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def __repr__(self):
        return f"Partition(n={self.n}, T={self.T:g}, mesh={self.mesh:g})"

    def check_time(self, t, name="t"):
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)) or np.any(t < -TIME_TOL) or np.any(t > self.T + TIME_TOL):
            raise OutOfRange(f"{name} outside [0, {self.T}]: {t}")
        return t

    def locate(self, t):
        """Index ``k`` of the subinterval ``[t_k, t_{k+1})`` holding ``t``.

        Breakpoints belong to the interval on their right; ``t = T`` maps to
        the last interval.  Times within ``TIME_TOL`` of a breakpoint snap to it.
        """
        t = self.check_time(t)
        k = np.searchsorted(self.points, t + TIME_TOL, side="right") - 1
        k = np.clip(k, 0, self.n - 1)
        return int(k) if k.ndim == 0 else k

    def is_breakpoint(self, t) -> bool:
        return bool(np.min(np.abs(self.points - t)) <= TIME_TOL)

    def to_json(self) -> str:
        return json.dumps([float(x) for x in self.points])

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        return make_partition(json.loads(text))


def make_partition(points: Sequence[float]) -> Partition:
    pts = np.asarray(points, dtype=float).ravel()
    if pts.size < 2:
        raise TooFewPoints(f"a partition needs at least 2 points, got {pts.size}")
    if not np.all(np.isfinite(pts)):
        raise WrongEndpoints("breakpoints must be finite")
    if np.any(np.diff(pts) <= 0):
        raise NotSorted("breakpoints must be strictly increasing")
    if pts[0] != 0.0 or pts[-1] <= pts[0]:
        raise WrongEndpoints(f"partition must start at 0 and end at T > 0, got [{pts[0]}, {pts[-1]}]")
    return Partition(pts)


def uniform_partition(n: int, T: float = 1.0) -> Partition:
    pts = np.linspace(0.0, T, n + 1)
    pts[-1] = T
    return make_partition(pts)


def kernel_coeffs(p: Partition, t) -> np.ndarray:
    """Per-subinterval values of ``u -> K_t(u)``; shape ``t.shape + (n,)``."""
    t = p.check_time(t)
    lo = p.points[:-1]
    c = (t[..., None] - lo) / p.deltas
    c = np.where(np.abs(t[..., None] - lo) <= TIME_TOL, 0.0, c)
    return np.clip(c, 0.0, 1.0)


def kernel_value(p: Partition, t, u):
    """``K_t(u)``, the weight of ``dB_u`` in the polygonal value at time ``t``."""
    t, u = np.broadcast_arrays(p.check_time(t), p.check_time(u, "u"))
    c = kernel_coeffs(p, t)
    j = np.asarray(p.locate(u))
    out = np.take_along_axis(c, j[..., None], axis=-1)[..., 0]
    return float(out) if out.ndim == 0 else out


def kernel_dt(p: Partition, t, u):
    """Time derivative ``d/dt K_t(u) = 1/dt_k`` when ``u`` and ``t`` share a subinterval."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= p.T - TIME_TOL):
        raise OutOfRange(f"t must lie in [0, T), got {t}")
    k = np.asarray(p.locate(t))
    j = np.asarray(p.locate(u))
    out = np.where(j == k, 1.0 / p.deltas[k], 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class KernelSlice:
    """``kappa_{s,t}(u) = int_s^t sigma(r) d/dr K_r(u) dr`` for piecewise-constant sigma.

    With ``sigma == 1`` this is ``K_t - K_s``.  Negative weights are allowed,
    so ``-slice`` is again a slice.
    """

    partition: Partition
    s: float
    t: float
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", _readonly(self.sigma))

    @cached_property
    def coeffs(self) -> np.ndarray:
        p = self.partition
        lo, hi = p.points[:-1], p.points[1:]
        overlap = np.clip(np.minimum(self.t, hi) - np.maximum(self.s, lo), 0.0, None)
        overlap = np.where(overlap <= TIME_TOL, 0.0, overlap)
        return _readonly(self.sigma * overlap / p.deltas)

    @property
    def knots(self) -> np.ndarray:
        return self.partition.points

    @property
    def values(self) -> np.ndarray:
        return self.coeffs

    @cached_property
    def norm_sq(self) -> float:
        return float(np.sum(self.coeffs**2 * self.partition.deltas))

    def __neg__(self):
        return KernelSlice(self.partition, self.s, self.t, -self.sigma)

    def __call__(self, u):
        return self.coeffs[self.partition.locate(u)]


def weighted_kernel(p: Partition, s: float, t: float, sigma) -> KernelSlice:
    sigma = np.asarray(sigma, dtype=float).ravel()
    if sigma.size != p.n:
        raise DimensionMismatch(f"sigma needs {p.n} entries (one per subinterval), got {sigma.size}")
    p.check_time(s, "s")
    p.check_time(t, "t")
    if s > t + TIME_TOL:
        raise OutOfRange(f"need s <= t, got s={s}, t={t}")
    return KernelSlice(p, float(s), float(max(s, t)), sigma)


def kernel_slice(p: Partition, s: float, t: float) -> KernelSlice:
    """Unweighted slice ``K_t - K_s``."""
    return weighted_kernel(p, s, t, np.ones(p.n))


def inner_product(a: KernelSlice, b: KernelSlice) -> float:
    if a.partition != b.partition:
        raise PartitionMismatch("kernel slices live on different partitions")
    return float(np.sum(a.coeffs * b.coeffs * a.partition.deltas))


@dataclass(frozen=True, eq=False)
class Direction:
    """Step function on ``[0, T]``: ``values[i]`` on ``[knots[i], knots[i+1])``, zero elsewhere."""

    knots: np.ndarray
    values: np.ndarray
    admissible: bool = False
    norm_sq: float = field(init=False)

    def __post_init__(self):
        knots = _readonly(self.knots)
        values = _readonly(self.values)
        if knots.ndim != 1 or values.shape != (max(knots.size - 1, 0),):
            raise DimensionMismatch("need len(values) == len(knots) - 1")
        if np.any(np.diff(knots) < 0):
            raise NotSorted("direction knots must be nondecreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "norm_sq", float(np.sum(values**2 * np.diff(knots))))

    @cached_property
    def _cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.values * np.diff(self.knots))])

    def antiderivative(self, t):
        """``int_0^t h(u) du``, exact (piecewise linear between knots)."""
        if self.knots.size < 2:
            return np.zeros_like(np.asarray(t, dtype=float))
        return np.interp(t, self.knots, self._cumulative)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        i = np.searchsorted(self.knots, u, side="right") - 1
        inside = (i >= 0) & (i < self.values.size)
        return np.where(inside, self.values[np.clip(i, 0, max(self.values.size - 1, 0))], 0.0)

    def __neg__(self):
        return Direction(self.knots, -self.values, self.admissible)


StepLike = Union[Direction, KernelSlice]


def as_direction(g: StepLike) -> Direction:
    if isinstance(g, Direction):
        return g
    return Direction(g.knots, g.values)


def indicator_direction(a: float, b: float, height: float = 1.0) -> Direction:
    """``height * 1_{[a, b)}``."""
    return Direction([a, b], [height])


def _merged_knots(*knot_arrays) -> np.ndarray:
    k = np.unique(np.concatenate([np.asarray(a, dtype=float) for a in knot_arrays]))
    if k.size == 0:
        return k
    keep = np.concatenate([[True], np.diff(k) > TIME_TOL])
    return k[keep]


def combine(terms) -> Direction:
    """Linear combination ``sum_i c_i g_i`` of step functions as one Direction.

    ``terms`` is an iterable of ``(coefficient, step_function)``; ``None``
    entries are skipped.
    """
    terms = [(float(c), as_direction(g)) for c, g in terms if g is not None and c != 0.0]
    if not terms:
        return Direction([], [])
    knots = _merged_knots(*[g.knots for _, g in terms])
    if knots.size < 2:
        return Direction(knots, np.zeros(max(knots.size - 1, 0)))
    mid = 0.5 * (knots[:-1] + knots[1:])
    values = sum(c * g(mid) for c, g in terms)
    return Direction(knots, values)


def step_inner(f: StepLike, g: StepLike) -> float:
    """``int f(u) g(u) du`` for two step functions."""
    if isinstance(f, KernelSlice) and isinstance(g, KernelSlice):
        return inner_product(f, g)
    f, g = as_direction(f), as_direction(g)
    if f.knots.size < 2 or g.knots.size < 2:
        return 0.0
    knots = _merged_knots(f.knots, g.knots)
    mid = 0.5 * (knots[:-1] + knots[1:])
    return float(np.sum(f(mid) * g(mid) * np.diff(knots)))


def make_haar_direction(p: Partition) -> Direction:
    """+1 on the first half and -1 on the second half of every subinterval."""
    knots = np.empty(2 * p.n + 1)
    knots[0::2] = p.points
    knots[1::2] = 0.5 * (p.points[:-1] + p.points[1:])
    values = np.tile([1.0, -1.0], p.n)
    return Direction(knots, values, admissible=True)


def eta_direction(p: Partition, r: float, side: str = "right") -> Direction:
    """``u -> d/dr K_r(u)``: ``1/dt_k`` on the subinterval holding ``r``.

    ``side="left"`` takes the left limit at a breakpoint (the interval ending
    at ``r``), which is needed for quadrature across the jumps.
    """
    k = p.locate(r)
    if side == "left" and k > 0 and abs(r - p.points[k]) <= TIME_TOL:
        k -= 1
    elif side == "right" and r >= p.T - TIME_TOL:
        raise OutOfRange("the right-limit direction is undefined at t = T")
    return Direction(p.points[k:k + 2], [1.0 / p.deltas[k]])


@dataclass(frozen=True)
class DirectionReport:
    admissible: bool
    nonzero: bool
    interval_means: np.ndarray
    max_residual: float
    violating: tuple


def check_direction(p: Partition, h: Direction, n_r: int = 10_000, tol: float = 1e-12) -> DirectionReport:
    """Admissibility of ``h``: zero mean on every subinterval and nonzero a.e.

    ``max_residual`` is ``max_r |<d/dr K_r, h>|`` over ``n_r`` equispaced
    ``r`` in ``[0, T)``; for ``r`` in subinterval ``k`` that pairing equals the
    interval mean of ``h``.
    """
    h = as_direction(h)
    H = h.antiderivative(p.points)
    means = np.diff(H) / p.deltas
    r = np.linspace(0.0, p.T, n_r, endpoint=False)
    residual = float(np.max(np.abs(means[p.locate(r)])))
    covered = h.knots.size >= 2 and h.knots[0] <= TIME_TOL and h.knots[-1] >= p.T - TIME_TOL
    widths = np.diff(h.knots)
    nonzero = bool(covered and np.all((h.values != 0.0) | (widths <= TIME_TOL)))
    violating = tuple(int(k) for k in np.flatnonzero(np.abs(means) > tol))
    return DirectionReport(
        admissible=bool(nonzero and not violating),
        nonzero=nonzero,
        interval_means=means,
        max_residual=residual,
        violating=violating,
    )
