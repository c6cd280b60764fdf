"""Pathwise solution of the Wick-type random ODE ``X' = b(t, X) + sigma(t) X <> dB^pi/dt``.

The solution is obtained by reduction: ``X_t = Z_t <> E(kappa_{s,t})`` where
``Z`` solves the ordinary equation

    Z_t = Y + int_s^t b(r, Z_r / E(-kappa_{s,r})) E(-kappa_{s,r}) dr,

and the Wick product is turned into an ordinary product on a shifted path,
``X_t = (T_{-kappa_{s,t}} Z_t) * E(kappa_{s,t})``.  ``Z`` is integrated with
classical RK4 on the fine grid of the path; ``E(-kappa_{s,r})`` is known in
closed form at every ``r`` from the breakpoint values of the path.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, GridMisaligned, NonFiniteState, OutOfRange
from .kernels import (
    TIME_TOL,
    Direction,
    Partition,
    indicator_direction,
    make_partition,
    step_inner,
    weighted_kernel,
)
from .paths import DEFAULT_M, PathSample, fine_grid, sample_paths, shift_path, stoch_exp

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Drift:
    """Registry drift ``b(x)`` with analytic ``b_x``, ``b_xx`` and its bounds.

    ``lipschitz`` bounds ``|b_x|``; ``growth`` is ``M`` in ``|b(x)| <= M (1 + |x|)``.
    """

    id: str
    params: dict
    b: Callable
    b_x: Callable
    b_xx: Callable
    lipschitz: float
    growth: float

    def to_dict(self):
        return {"id": self.id, "params": dict(self.params)}


def _zero():
    zero = lambda x: np.zeros_like(x)  # noqa: E731
    return Drift("zero", {}, zero, zero, zero, 0.0, 0.0)


def _linear(beta):
    beta = float(beta)
    return Drift("linear", {"beta": beta}, lambda x: beta * x, lambda x: np.full_like(x, beta),
                 lambda x: np.zeros_like(x), abs(beta), abs(beta))


def _tanh_logistic(a, c):
    a, c = float(a), float(c)

    def b_x(x):
        return a * c / np.cosh(c * x) ** 2

    def b_xx(x):
        return -2.0 * a * c * c * np.tanh(c * x) / np.cosh(c * x) ** 2

    return Drift("tanh_logistic", {"a": a, "c": c}, lambda x: a * np.tanh(c * x), b_x, b_xx,
                 abs(a * c), abs(a))


def _sin_drift(a, omega):
    a, omega = float(a), float(omega)
    return Drift("sin_drift", {"a": a, "omega": omega}, lambda x: a * np.sin(omega * x),
                 lambda x: a * omega * np.cos(omega * x), lambda x: -a * omega**2 * np.sin(omega * x),
                 abs(a * omega), abs(a))


DRIFTS = {
    "zero": _zero,
    "linear": _linear,
    "tanh_logistic": _tanh_logistic,
    "sin_drift": _sin_drift,
}


def make_drift(id: str, **params) -> Drift:
    try:
        factory = DRIFTS[id]
    except KeyError:
        raise ConfigError(f"unknown drift id {id!r}; known: {sorted(DRIFTS)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for drift {id!r}: {exc}") from None


@dataclass(frozen=True)
class InitialCondition:
    """``Y = x0`` (deterministic) or ``Y = y0 * E(g)`` (lognormal_exp)."""

    kind: str
    value: float
    direction: Optional[Direction] = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "lognormal_exp"):
            raise ConfigError(f"unknown initial condition kind {self.kind!r}")
        if self.kind == "lognormal_exp" and self.direction is None:
            raise ConfigError("lognormal_exp needs a direction")

    def evaluate(self, ps: PathSample):
        if self.kind == "deterministic":
            return np.full(ps.batch_shape, self.value)
        return self.value * stoch_exp(ps, self.direction).value

    def derivative(self, ps: PathSample, h):
        """``D_h Y`` on the path: ``y0 E(g) <g, h>`` (zero for deterministic data)."""
        if self.kind == "deterministic":
            return np.zeros(ps.batch_shape)
        return self.evaluate(ps) * step_inner(self.direction, h)

    def to_dict(self):
        if self.kind == "deterministic":
            return {"kind": "deterministic", "x0": self.value}
        return {"kind": "lognormal_exp", "y0": self.value,
                "direction": {"knots": self.direction.knots.tolist(),
                              "values": self.direction.values.tolist()}}


def deterministic(x0: float) -> InitialCondition:
    return InitialCondition("deterministic", float(x0))


def lognormal_exp(y0: float, g) -> InitialCondition:
    return InitialCondition("lognormal_exp", float(y0), g if isinstance(g, Direction) else Direction(g.knots, g.values))


@dataclass(frozen=True)
class ModelSpec:
    drift: Drift
    init: InitialCondition
    s: float = 0.0
    sigma: Optional[tuple] = None

    def sigma_for(self, p: Partition) -> np.ndarray:
        if self.sigma is None:
            return np.ones(p.n)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.size != p.n:
            raise ConfigError(f"sigma has {sigma.size} entries but the partition has {p.n} subintervals")
        return sigma

    def unit_sigma(self) -> bool:
        return self.sigma is None or bool(np.all(np.asarray(self.sigma) == 1.0))

    def to_dict(self):
        return {"drift": self.drift.to_dict(), "init": self.init.to_dict(), "s": self.s,
                "sigma": None if self.sigma is None else [float(x) for x in self.sigma]}

    @classmethod
    def from_dict(cls, d):
        drift = make_drift(d["drift"]["id"], **d["drift"].get("params", {}))
        i = d["init"]
        if i["kind"] == "deterministic":
            init = deterministic(i["x0"])
        else:
            init = lognormal_exp(i["y0"], Direction(i["direction"]["knots"], i["direction"]["values"]))
        sigma = d.get("sigma")
        return cls(drift, init, float(d.get("s", 0.0)), None if sigma is None else tuple(sigma))


def model(drift: Drift, init: InitialCondition, s: float = 0.0, sigma=None) -> ModelSpec:
    return ModelSpec(drift, init, float(s), None if sigma is None else tuple(float(x) for x in sigma))


@dataclass(frozen=True)
class Trajectory:
    grid: np.ndarray
    z_values: np.ndarray
    x_values: np.ndarray


def node_indices(ps: PathSample, times) -> np.ndarray:
    """Fine-grid node index of every time, or ``GridMisaligned``."""
    grid = ps.fine_grid
    times = np.atleast_1d(np.asarray(times, dtype=float))
    i = np.clip(np.searchsorted(grid, times), 0, grid.size - 1)
    lower = np.clip(i - 1, 0, grid.size - 1)
    i = np.where(np.abs(grid[lower] - times) < np.abs(grid[i] - times), lower, i)
    bad = np.abs(grid[i] - times) > TIME_TOL
    if np.any(bad):
        raise GridMisaligned(f"times {times[bad]} are not fine-grid nodes")
    return i


def _check_s(ps: PathSample, spec: ModelSpec) -> int:
    p = ps.partition
    if not (-TIME_TOL <= spec.s < p.T - TIME_TOL):
        raise OutOfRange(f"start time s={spec.s} must lie in [0, T)")
    return int(node_indices(ps, [spec.s])[0])


def _first_bad(ps: PathSample, bad: np.ndarray):
    flat = np.flatnonzero(bad.reshape(-1)) if bad.ndim else np.array([0])
    if ps.index is None:
        return int(flat[0]) if bad.ndim else None
    idx = np.asarray(ps.index).reshape(-1)
    return int(idx[flat[0]]) if idx.size > 1 else int(idx[0])


def _kappa_terms(ps: PathSample, spec: ModelSpec, r):
    """``(W_r, |kappa_{s,r}|^2 / 2)`` with ``W_r = int kappa_{s,r} dB`` on the path."""
    p = ps.partition
    sigma = spec.sigma_for(p)
    lo, hi = p.points[:-1], p.points[1:]
    overlap = np.clip(np.minimum(np.asarray(r)[:, None], hi) - np.maximum(spec.s, lo), 0.0, None)
    coeff = sigma * overlap / p.deltas
    return ps.partition_increments @ coeff.T, 0.5 * np.sum(coeff**2 * p.deltas, axis=1)


def integrate_z(ps: PathSample, spec: ModelSpec, record, refine: int = 1, with_bx: bool = False):
    """RK4 for the reduced equation on ``ps``; returns values at ``record`` times.

    Returns ``(z, bx_int, x_arg)`` each shaped ``batch + (len(record),)``.
    ``x_arg = Z_r / E(-kappa_{s,r})`` is the drift argument, and ``bx_int`` is
    ``int_s^r b_x(x_arg) dr`` integrated jointly with ``Z`` when ``with_bx``.
    """
    p = ps.partition
    i_s = _check_s(ps, spec)
    rec = node_indices(ps, record)
    if np.any(rec < i_s):
        raise GridMisaligned("record times must not precede the start time s")
    y = spec.init.evaluate(ps)
    n_rec = rec.size
    shape = ps.batch_shape + (n_rec,)
    i_end = int(rec.max())

    grid = ps.fine_grid[i_s:i_end + 1]
    if spec.drift.id == "zero":
        # Z is constant; only the drift argument at the recorded times is needed
        w, half_norm = _kappa_terms(ps, spec, ps.fine_grid[rec])
        z_out = np.broadcast_to(np.asarray(y, dtype=float)[..., None], shape).copy()
        return z_out, np.zeros(shape), z_out * np.exp(w + half_norm)

    sub = np.linspace(0.0, 1.0, 2 * refine + 1)
    r_all = np.concatenate([grid[:-1, None] + np.diff(grid)[:, None] * sub[None, :-1],
                            grid[-1:, None]], axis=None) if grid.size > 1 else grid.copy()
    w, half_norm = _kappa_terms(ps, spec, r_all)
    # E(-kappa_{s,r}) = exp(-W_r - |kappa|^2/2); its inverse maps Z to the drift argument
    e_neg = np.exp(-w - half_norm)
    e_inv = np.exp(w + half_norm)

    z_out = np.empty(shape)
    bx_out = np.zeros(shape)
    x_out = np.empty(shape)
    rec_pos = {int(r) - i_s: j for j, r in enumerate(rec)}
    pos_of = {}
    for node, j in rec_pos.items():
        pos_of.setdefault(node, []).append(j)

    b, b_x = spec.drift.b, spec.drift.b_x
    z = np.array(y, dtype=float)
    L = np.zeros_like(z)

    def store(node):
        for j in pos_of.get(node, ()):
            z_out[..., j] = z
            bx_out[..., j] = L
            x_out[..., j] = z * e_inv[..., 2 * refine * node]

    store(0)
    n_cells = grid.size - 1
    # overflow is detected below and reported as NonFiniteState
    with np.errstate(over="ignore", invalid="ignore"):
        for cell in range(n_cells):
            h = (grid[cell + 1] - grid[cell]) / refine
            for step in range(refine):
                j0 = 2 * (refine * cell + step)
                e0, e1, e2 = e_neg[..., j0], e_neg[..., j0 + 1], e_neg[..., j0 + 2]
                i0, i1, i2 = e_inv[..., j0], e_inv[..., j0 + 1], e_inv[..., j0 + 2]
                k1 = b(z * i0) * e0
                z2 = z + 0.5 * h * k1
                k2 = b(z2 * i1) * e1
                z3 = z + 0.5 * h * k2
                k3 = b(z3 * i1) * e1
                z4 = z + h * k3
                k4 = b(z4 * i2) * e2
                if with_bx:
                    L = L + h / 6.0 * (b_x(z * i0) + 2.0 * b_x(z2 * i1) + 2.0 * b_x(z3 * i1) + b_x(z4 * i2))
                z = z + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            store(cell + 1)

    bad = ~np.isfinite(z_out) | ~np.isfinite(x_out)
    if np.any(bad):
        path_bad = bad.any(axis=-1)
        raise NonFiniteState("non-finite state while integrating Z; the drift left its registry contract",
                             path_index=_first_bad(ps, path_bad))
    return z_out, bx_out, x_out


def solve_z(ps: PathSample, spec: ModelSpec, grid, refine: int = 1) -> np.ndarray:
    """``Z`` at the (fine-node) times in ``grid``; ``refine`` splits every cell into RK4 sub-steps."""
    return integrate_z(ps, spec, grid, refine=refine)[0]


def reconstruct_x(ps: PathSample, spec: ModelSpec, t: float, refine: int = 1):
    """``X_t = (T_{-kappa_{s,t}} Z_t) * E(kappa_{s,t})`` by re-solving on the shifted path."""
    p = ps.partition
    if t < spec.s - TIME_TOL:
        raise OutOfRange(f"t={t} precedes the start time s={spec.s}")
    kappa = weighted_kernel(p, spec.s, t, spec.sigma_for(p))
    shifted = shift_path(ps, kappa, -1.0)
    z = integrate_z(shifted, spec, [t], refine=refine)[0][..., 0]
    return z * stoch_exp(ps, kappa).value


def solve(ps: PathSample, spec: ModelSpec, grid, refine: int = 1) -> Trajectory:
    grid = np.asarray(grid, dtype=float)
    z = solve_z(ps, spec, grid, refine)
    x = np.stack([reconstruct_x(ps, spec, float(t), refine) for t in grid], axis=-1)
    return Trajectory(grid, z, x)


def default_grid(p: Partition, m: int, s: float = 0.0, every: int = 1) -> np.ndarray:
    """Fine-grid nodes in ``[s, T]``, keeping every ``every``-th one plus all breakpoints."""
    g = fine_grid(p, m)
    g = g[g >= s - TIME_TOL]
    keep = np.zeros(g.size, dtype=bool)
    keep[::every] = True
    keep[-1] = True
    keep |= np.min(np.abs(g[:, None] - p.points[None, :]), axis=1) <= TIME_TOL
    return g[keep]


@dataclass
class EnsembleRun:
    """Per-path trajectories on an output grid plus what is needed to reproduce them.

    ``dhx`` holds the closed-form ``D_h X`` along the Haar direction; ``deta``
    and ``deta_left`` hold ``D_{eta_r} X_r`` with right and left limits of the
    direction ``eta_r = d/dr K_r`` (they differ only at breakpoints).
    """

    config: dict
    spec: ModelSpec
    partition: Partition
    m: int
    master_seed: int
    grid: np.ndarray
    z: np.ndarray
    x: np.ndarray
    dhx: Optional[np.ndarray] = None
    deta: Optional[np.ndarray] = None
    deta_left: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]

    @property
    def path_ids(self) -> np.ndarray:
        return np.arange(self.n_paths)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.grid - t)))
        if abs(self.grid[i] - t) > TIME_TOL:
            raise GridMisaligned(f"t={t} is not on the output grid")
        return i

    def save(self, directory) -> Path:
        return save_run(self, directory)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _chunk_paths(spec, p, m, master_seed, grid, start, count, derivatives, eps):
    from . import malliavin

    ps = sample_paths(p, m, master_seed, count, start=start)
    traj = solve(ps, spec, grid)
    out = {"z": traj.z_values, "x": traj.x_values}
    if derivatives:
        out.update(malliavin.ensemble_derivatives(ps, spec, grid, eps))
    return out


def run_ensemble(spec: ModelSpec, p: Partition, m: int = DEFAULT_M, n_paths: int = 1, master_seed: int = 0,
                 grid=None, derivatives: bool = False, eps: float = 1e-4, chunk_size: int = 10_000,
                 threads: Optional[int] = None) -> EnsembleRun:
    """Solve ``n_paths`` paths; path ``i`` uses the noise keyed by ``(master_seed, i)``.

    Results do not depend on ``chunk_size`` or ``threads``.  With
    ``derivatives`` the Malliavin quantities of :mod:`wickwz.malliavin` are
    attached (``dhx`` only when the model admits the closed form).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    grid = default_grid(p, m, spec.s) if grid is None else np.asarray(grid, dtype=float)
    threads = threads or int(os.environ.get("WICKWZ_THREADS", "1"))
    starts = list(range(0, n_paths, chunk_size))
    jobs = [(st, min(chunk_size, n_paths - st)) for st in starts]

    def work(job):
        st, cnt = job
        try:
            return _chunk_paths(spec, p, m, master_seed, grid, st, cnt, derivatives, eps)
        except NonFiniteState as exc:
            raise NonFiniteState(f"path {exc.path_index}: {exc}", path_index=exc.path_index) from exc

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, jobs))
    else:
        parts = [work(job) for job in jobs]

    def cat(key):
        if parts[0].get(key) is None:
            return None
        return np.concatenate([part[key] for part in parts], axis=0)

    config = {
        "partition": [float(x) for x in p.points],
        "m": int(m),
        "n_paths": int(n_paths),
        "master_seed": int(master_seed),
        "model": spec.to_dict(),
        "grid": [float(x) for x in grid],
        "derivatives": bool(derivatives),
        "eps": float(eps),
    }
    return EnsembleRun(config, spec, p, m, master_seed, grid, cat("z"), cat("x"),
                       cat("dhx"), cat("deta"), cat("deta_left"))


def _fmt(x: float) -> str:
    return repr(float(x))


def save_run(run: EnsembleRun, directory, timestamp: Optional[str] = None) -> Path:
    """Write ``run.json`` and ``trajectories.csv`` (plus ``derivatives.csv`` when present)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"schema_version": SCHEMA_VERSION,
            "config": run.config,
            "config_hash": run.config_hash,
            "seeds": {"master_seed": run.master_seed, "path_seed_rule": "philox key (master_seed, path_id)"},
            "metadata": dict(run.metadata, **({"created": timestamp} if timestamp else {}))}
    (directory / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(directory / "trajectories.csv", "w") as fh:
        fh.write("path_id,t,Z,X\n")
        for i in range(run.n_paths):
            for j, t in enumerate(run.grid):
                fh.write(f"{i},{_fmt(t)},{_fmt(run.z[i, j])},{_fmt(run.x[i, j])}\n")
    if run.dhx is not None or run.deta is not None:
        with open(directory / "derivatives.csv", "w") as fh:
            fh.write("path_id,t,dhx,deta,deta_left\n")
            nan = np.full(run.x.shape, np.nan)
            dhx = run.dhx if run.dhx is not None else nan
            deta = run.deta if run.deta is not None else nan
            left = run.deta_left if run.deta_left is not None else nan
            for i in range(run.n_paths):
                for j, t in enumerate(run.grid):
                    fh.write(f"{i},{_fmt(t)},{_fmt(dhx[i, j])},{_fmt(deta[i, j])},{_fmt(left[i, j])}\n")
    return directory


def load_run(directory) -> EnsembleRun:
    directory = Path(directory)
    meta = json.loads((directory / "run.json").read_text())
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported run schema {meta.get('schema_version')}")
    cfg = meta["config"]
    p = make_partition(cfg["partition"])
    grid = np.asarray(cfg["grid"])
    n, g = cfg["n_paths"], grid.size
    data = np.loadtxt(directory / "trajectories.csv", delimiter=",", skiprows=1, ndmin=2)
    z = data[:, 2].reshape(n, g)
    x = data[:, 3].reshape(n, g)
    run = EnsembleRun(cfg, ModelSpec.from_dict(cfg["model"]), p, cfg["m"], cfg["master_seed"], grid, z, x,
                      metadata=meta.get("metadata", {}))
    dpath = directory / "derivatives.csv"
    if dpath.exists():
        d = np.loadtxt(dpath, delimiter=",", skiprows=1, ndmin=2)
        cols = [d[:, c].reshape(n, g) for c in (2, 3, 4)]
        run.dhx, run.deta, run.deta_left = [None if np.all(np.isnan(c)) else c for c in cols]
    return run


def gbm_indicator_init(x0: float, s: float) -> InitialCondition:
    """``Y = x0 E(1_{[0,s)})``, the exact GBM value at time ``s``."""
    if s <= TIME_TOL:
        return deterministic(x0)
    return lognormal_exp(x0, indicator_direction(0.0, s))
