"""Command line front end.

    wickwz <simulate|check-derivative|density|fp|convergence|gbm-demo> --config CFG
           [--out DIR] [--threads N] [--seed S]

Exit codes: 0 pass, 2 configuration error, 3 non-finite solver state,
4 statistical check failed.  Data goes to files in the output directory;
stdout carries a short human-readable summary.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats as sps

from . import gbm, malliavin, paths, solver, stats
from .errors import ConfigError, DegenerateInit, NonFiniteState, WickWZError
from .kernels import (
    Direction,
    Partition,
    indicator_direction,
    kernel_slice,
    make_haar_direction,
    make_partition,
    uniform_partition,
)

EXIT_OK, EXIT_CONFIG, EXIT_NONFINITE, EXIT_FAIL = 0, 2, 3, 4

EXPERIMENTS = ("simulate", "check-derivative", "density", "fp", "convergence", "gbm-demo")


@dataclass
class RunConfig:
    partition: dict = field(default_factory=lambda: {"uniform": 4, "T": 1.0})
    m: int = paths.DEFAULT_M
    n_paths: int = 1000
    master_seed: int = 0
    model: dict = field(default_factory=lambda: {"drift": {"id": "zero", "params": {}},
                                                 "init": {"kind": "deterministic", "x0": 1.0}, "s": 0.0})
    grid: Optional[dict] = None
    experiments: list = field(default_factory=list)
    out: str = "wickwz_out"
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self) -> None:
        for name in ("m", "n_paths", "master_seed"):
            if not isinstance(getattr(self, name), int):
                raise ConfigError(f"field '{name}' must be an integer")
        if self.n_paths < 1:
            raise ConfigError("field 'n_paths' must be positive")
        bad = [e for e in self.experiments if e not in EXPERIMENTS]
        if bad:
            raise ConfigError(f"field 'experiments' names unknown experiment(s) {bad}")
        self.build_partition()
        self.build_model(self.build_partition())

    def build_partition(self) -> Partition:
        p = self.partition
        try:
            if "points" in p:
                return make_partition(p["points"])
            return uniform_partition(int(p["uniform"]), float(p.get("T", 1.0)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"field 'partition' needs 'uniform' or 'points': {exc}") from None
        except WickWZError as exc:
            raise ConfigError(f"field 'partition': {exc}") from None

    def build_model(self, p: Partition) -> solver.ModelSpec:
        md = self.model
        try:
            drift = solver.make_drift(md["drift"]["id"], **md["drift"].get("params", {}))
        except KeyError as exc:
            raise ConfigError(f"field 'model.drift' is missing {exc}") from None
        except ConfigError as exc:
            raise ConfigError(f"field 'model.drift.id': {exc}") from None
        s = float(md.get("s", 0.0))
        init = _build_init(md.get("init", {}), p, s)
        sigma = md.get("sigma")
        spec = solver.model(drift, init, s, sigma)
        try:
            spec.sigma_for(p)
        except ConfigError as exc:
            raise ConfigError(f"field 'model.sigma': {exc}") from None
        return spec

    def build_grid(self, p: Partition, s: float) -> np.ndarray:
        g = self.grid or {}
        if "times" in g:
            return np.asarray(g["times"], dtype=float)
        return solver.default_grid(p, self.m, s, int(g.get("every", 1)))


def _build_init(d: dict, p: Partition, s: float) -> solver.InitialCondition:
    kind = d.get("kind")
    try:
        if kind == "deterministic":
            return solver.deterministic(float(d["x0"]))
        if kind == "gbm_indicator":
            return solver.gbm_indicator_init(float(d["x0"]), s)
        if kind == "lognormal_exp":
            return solver.lognormal_exp(float(d["y0"]), _build_direction(d.get("direction", "haar"), p))
    except KeyError as exc:
        raise ConfigError(f"field 'model.init' is missing {exc}") from None
    raise ConfigError(f"field 'model.init.kind' is unknown: {kind!r}")


def _build_direction(d, p: Partition) -> Direction:
    if d == "haar":
        return make_haar_direction(p)
    if isinstance(d, dict) and "indicator" in d:
        a, b = d["indicator"]
        return indicator_direction(float(a), float(b))
    if isinstance(d, dict) and "knots" in d:
        return Direction(d["knots"], d["values"])
    raise ConfigError(f"field 'model.init.direction' not understood: {d!r}")


# ---------------------------------------------------------------- commands

def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _setup(cfg: RunConfig):
    p = cfg.build_partition()
    spec = cfg.build_model(p)
    return p, spec, cfg.build_grid(p, spec.s)


def cmd_simulate(cfg: RunConfig, out: Path, threads: Optional[int]) -> int:
    p, spec, grid = _setup(cfg)
    run = solver.run_ensemble(spec, p, cfg.m, cfg.n_paths, cfg.master_seed, grid, threads=threads)
    run.metadata["config"] = cfg.to_dict()
    solver.save_run(run, out)
    print(f"simulated {run.n_paths} paths on {grid.size} grid times -> {out}")
    return EXIT_OK


def cmd_check_derivative(cfg: RunConfig, out: Path, threads: Optional[int]) -> int:
    p, spec, _ = _setup(cfg)
    opt = cfg.options
    h = make_haar_direction(p)
    eps = float(opt.get("eps", malliavin.DEFAULT_EPS))
    tol = float(opt.get("tol", 1e-5))
    n = min(cfg.n_paths, int(opt.get("n_check_paths", 100)))
    times = opt.get("times")
    if times is None:
        mids = 0.5 * (p.points[:-1] + p.points[1:])
        times = sorted(t for t in np.concatenate([mids, p.points[1:]]) if t > spec.s)
    ps = paths.sample_paths(p, cfg.m, cfg.master_seed, n)
    rows, worst = [], 0.0
    for t in times:
        closed = malliavin.dhx_closed(ps, spec, h, float(t))
        fd = malliavin.dhx_fd(ps, spec, h, float(t), eps)
        worst = max(worst, float(np.max(np.abs(fd / closed - 1.0))))
        rows += [(i, t, c, f, eps) for i, c, f in zip(ps.index, closed, fd)]
    malliavin.write_derivative_csv(out / "derivatives.csv", rows)
    order = malliavin.fd_order(ps, spec, h, float(times[-1]), opt.get("eps_list", (1e-2, 1e-3, 1e-4, 1e-5)))
    inv = malliavin.inverse_moment(malliavin.dhx_closed(ps, spec, h, float(times[-1])), float(opt.get("q", 5.0)),
                                   float(opt.get("trim", 0.01)), seed=cfg.master_seed)
    (out / "inverse_moment.json").write_text(inv.to_json() + "\n")
    passed = worst <= tol
    _write_json(out / "check_derivative.json", {
        "max_rel_discrepancy": worst, "tol": tol, "eps": eps, "n_paths": n, "times": [float(t) for t in times],
        "fd_order": {"eps": order.eps.tolist(), "errors": order.errors.tolist(), "used": order.used.tolist(),
                     "slope": order.slope},
        "inverse_moment": json.loads(inv.to_json()), "pass": passed})
    print(f"max relative closed-vs-FD discrepancy {worst:.3e} (tol {tol:g}); FD slope {order.slope:.3f}; "
          f"inverse moment {inv.estimate:.4g}")
    return EXIT_OK if passed else EXIT_FAIL


def _gbm_law(spec: solver.ModelSpec, p: Partition):
    """Exact lognormal law of ``X_t`` when the model is the zero-drift example, else None."""
    if spec.drift.id != "zero" or not spec.unit_sigma():
        return None
    init = spec.init
    if init.kind == "deterministic":
        pre = 0.0
    else:
        ind = indicator_direction(0.0, spec.s)
        if not (spec.s > 0 and np.array_equal(init.direction.knots, ind.knots)
                and np.array_equal(init.direction.values, ind.values)):
            return None
        pre = spec.s

    def pdf(t):
        var = pre + kernel_slice(p, spec.s, t).norm_sq
        return lambda x: sps.lognorm.pdf(x, np.sqrt(var), scale=init.value * np.exp(-0.5 * var))
    return pdf


def cmd_density(cfg: RunConfig, out: Path, threads: Optional[int]) -> int:
    p, spec, _ = _setup(cfg)
    times = np.asarray(cfg.options.get("times", [p.T]), dtype=float)
    run = solver.run_ensemble(spec, p, cfg.m, cfg.n_paths, cfg.master_seed, times, threads=threads)
    ests = [stats.kde_density(run.x[:, j], t=float(t)) for j, t in enumerate(times)]
    stats.write_density_csv(out / "density.csv", ests)
    law = _gbm_law(spec, p)
    report = {"times": times.tolist(), "bandwidths": [e.bandwidth for e in ests]}
    passed = True
    if law is not None:
        tol = float(cfg.options.get("l1_tol", 0.05))
        l1 = [stats.l1_distance(e, law(float(t))) for e, t in zip(ests, times)]
        passed = max(l1) <= tol
        report.update({"l1_to_exact": l1, "l1_tol": tol, "pass": passed})
    _write_json(out / "density_report.json", report)
    print("density estimates written" + (f"; L1 to exact law {report['l1_to_exact']}" if law else ""))
    return EXIT_OK if passed else EXIT_FAIL


def cmd_fp(cfg: RunConfig, out: Path, threads: Optional[int]) -> int:
    p, spec, grid = _setup(cfg)
    opt = cfg.options
    run = solver.run_ensemble(spec, p, cfg.m, cfg.n_paths, cfg.master_seed, grid, derivatives=True,
                              eps=float(opt.get("eps", malliavin.DEFAULT_EPS)), threads=threads)
    r_center = float(opt.get("r_center", grid[np.argmin(np.abs(grid - 0.5 * (spec.s + p.T)))]))
    bumps = opt.get("bumps")
    if bumps:
        phis = [stats.make_bump(*b, t_range=(spec.s, p.T)) for b in bumps]
    else:
        phis = stats.default_bumps(run, r_center, int(opt.get("n_bumps", 5)))
    reports = [stats.fp_residual(run, phi, seed=cfg.master_seed) for phi in phis]
    control = [stats.fp_residual(run, phi, seed=cfg.master_seed, drop_second_order=True) for phi in phis]
    stats.write_fp_report(out / "fp_report.json", reports)
    _write_json(out / "fp_negative_control.json", [r.to_dict() for r in control])
    mids = [t for t in 0.5 * (p.points[:-1] + p.points[1:]) if t > spec.s]
    stats.write_g_csv(out / "g_estimate.csv", [stats.regress_run(run, float(t)) for t in mids
                                               if np.any(np.isclose(grid, t))])
    passed = all(r.passed for r in reports)
    for r in reports:
        print(f"{r.test_function_id}: residual {r.residual:.3e} +- {r.std_error:.3e} "
              f"{'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_convergence(cfg: RunConfig, out: Path, threads: Optional[int]) -> int:
    opt = cfg.options
    ns = opt.get("ns", [4, 8, 16, 32, 64, 128, 256])
    n_seeds = int(opt.get("n_seeds", 200))
    T = float(cfg.partition.get("T", 1.0))
    seeds = [cfg.master_seed + i for i in range(n_seeds)]
    rep = paths.convergence_report(seeds, ns, cfg.m, T)
    lo, hi = opt.get("slope_band", [0.4, 0.55])
    passed = lo <= rep.slope <= hi
    _write_json(out / "convergence.json", {"ns": rep.ns.tolist(), "mesh": rep.mesh.tolist(),
                                           "mean_sup_error": rep.errors.tolist(), "slope": rep.slope,
                                           "slope_band": [lo, hi], "n_seeds": n_seeds, "pass": passed})
    print(f"log-log slope {rep.slope:.3f} (band [{lo}, {hi}]) {'pass' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_gbm_demo(cfg: RunConfig, out: Path, threads: Optional[int]) -> int:
    p = cfg.build_partition()
    s = float(cfg.model.get("s", 0.0))
    t = solver.default_grid(p, cfg.m, s)
    cmp = gbm.fp_operator_compare(p, s, t)
    gbm.write_gbm_demo_csv(out / "gbm_demo.csv", cmp)
    passed = bool(np.isclose(cmp.running_avg[-1], 0.5, rtol=0, atol=1e-12))
    _write_json(out / "gbm_demo.json", {"sup_deviation": cmp.sup_deviation,
                                        "breakpoint_running_avg": cmp.breakpoint_running_avg.tolist(),
                                        "interval_averages": cmp.interval_averages.tolist(), "pass": passed})
    print(f"sup |xi - 1/2| = {cmp.sup_deviation:g}; running average at T = {cmp.running_avg[-1]:.15g}")
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "check-derivative": cmd_check_derivative, "density": cmd_density,
            "fp": cmd_fp, "convergence": cmd_convergence, "gbm-demo": cmd_gbm_demo}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wickwz", description="Wick-type Wong-Zakai experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker cap (falls back to WICKWZ_THREADS)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.threads)
    except NonFiniteState as exc:
        print(f"error: non-finite solver state on path {exc.path_index}: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (ConfigError, DegenerateInit) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WickWZError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
