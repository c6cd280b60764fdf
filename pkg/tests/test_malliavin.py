import json

import numpy as np
import pytest

from wickwz.errors import BadStep, DegenerateInit, NoDerivatives, OutOfRange, SigmaUnsupported
from wickwz.kernels import Direction, eta_direction, kernel_slice, make_haar_direction
from wickwz.malliavin import (
    deta_x,
    dhx_closed,
    dhx_fd,
    doubly_shifted_x,
    doubly_shifted_x_reference,
    dx_equation_residual,
    fd_order,
    fd_richardson,
    inverse_moment,
    write_derivative_csv,
)
from wickwz.paths import sample_path, sample_paths, zero_path
from wickwz.solver import deterministic, gbm_indicator_init, lognormal_exp, make_drift, model, run_ensemble

DRIFTS = [make_drift("zero"), make_drift("linear", beta=0.5), make_drift("tanh_logistic", a=1.0, c=2.0),
          make_drift("sin_drift", a=0.8, omega=3.0)]


@pytest.fixture
def batch(p4):
    return sample_paths(p4, 32, 23, 100)


def test_exact_identity_zero_drift(p4, haar4, batch):
    spec = model(make_drift("zero"), lognormal_exp(1.3, haar4))
    from wickwz.solver import reconstruct_x

    for t in (0.125, 0.25, 0.625, 1.0):
        d = dhx_closed(batch, spec, haar4, t)
        assert np.max(np.abs(d / (haar4.norm_sq * reconstruct_x(batch, spec, t)) - 1)) <= 1e-10


def test_fd_recovers_zero_drift_identity(p4, haar4, batch):
    spec = model(make_drift("zero"), lognormal_exp(1.0, haar4))
    from wickwz.solver import reconstruct_x

    x = reconstruct_x(batch, spec, 0.75)
    assert np.max(np.abs(dhx_fd(batch, spec, haar4, 0.75, 1e-4) / x - 1)) <= 1e-7


@pytest.mark.parametrize("drift", DRIFTS, ids=lambda d: d.id)
def test_closed_form_matches_fd(p4, haar4, batch, drift):
    spec = model(drift, lognormal_exp(1.0, haar4))
    for t in (0.125, 0.25, 0.375, 0.5, 0.875, 1.0):
        closed = dhx_closed(batch, spec, haar4, t)
        fd = dhx_fd(batch, spec, haar4, t, 1e-4)
        assert np.all(closed > 0)
        assert np.max(np.abs(fd / closed - 1)) <= 1e-5


def test_closed_form_with_restart(p4, haar4):
    ps = sample_paths(p4, 32, 2, 20)
    spec = model(make_drift("tanh_logistic", a=1.0, c=2.0), lognormal_exp(1.0, haar4), s=0.5)
    for t in (0.5, 0.625, 1.0):
        assert np.allclose(dhx_closed(ps, spec, haar4, t), dhx_fd(ps, spec, haar4, t), rtol=1e-5)


def test_closed_form_errors(p4, haar4, batch):
    with pytest.raises(DegenerateInit):
        dhx_closed(batch, model(make_drift("zero"), deterministic(1.0)), haar4, 0.5)
    with pytest.raises(DegenerateInit):
        dhx_closed(batch, model(make_drift("zero"), gbm_indicator_init(1.0, 0.5), s=0.5), haar4, 0.75)
    with pytest.raises(SigmaUnsupported):
        dhx_closed(batch, model(make_drift("zero"), lognormal_exp(1.0, haar4), sigma=[2, 1, 1, 1]), haar4, 0.5)


def test_fd_order_is_two(p4, haar4):
    ps = sample_paths(p4, 32, 1, 20)
    rep = fd_order(ps, model(make_drift("tanh_logistic", a=1.0, c=2.0), lognormal_exp(1.0, haar4)), haar4, 0.625)
    assert rep.used.sum() >= 3
    assert abs(rep.slope - 2.0) <= 0.3


def test_fd_richardson_estimate(p4, haar4):
    ps = sample_paths(p4, 32, 1, 5)
    spec = model(make_drift("tanh_logistic", a=1.0, c=2.0), lognormal_exp(1.0, haar4))
    val, err = fd_richardson(ps, spec, haar4, 0.5, 1e-3)
    closed = dhx_closed(ps, spec, haar4, 0.5)
    assert np.all(np.abs(val - closed) <= 2 * err + 1e-12)


def test_fd_needs_no_admissibility(p4, batch):
    spec = model(make_drift("zero"), deterministic(1.0))
    ones = Direction([0, 1], [1.0])
    from wickwz.solver import reconstruct_x

    # X_1 = E(K_{0,1}) with K_{0,1} = 1, so D_1 X_1 = X_1 <1, 1> = X_1
    x = reconstruct_x(batch, spec, 1.0)
    assert np.allclose(dhx_fd(batch, spec, ones, 1.0), x * 1.0, rtol=1e-7)
    with pytest.raises(BadStep):
        dhx_fd(batch, spec, ones, 1.0, eps=0.0)


def test_deta_gbm_sawtooth(p4):
    ps = sample_paths(p4, 32, 4, 50)
    spec = model(make_drift("zero"), gbm_indicator_init(1.0, 0.25), s=0.25)
    from wickwz.solver import reconstruct_x

    for r in (0.3125, 0.375, 0.46875, 0.8125):
        k = p4.locate(r)
        xi = (r - p4.points[k]) / p4.deltas[k]
        assert np.allclose(deta_x(ps, spec, r, 1e-4), reconstruct_x(ps, spec, r) * xi, rtol=1e-6)
    assert np.max(np.abs(deta_x(ps, spec, 0.5))) <= 1e-8
    with pytest.raises(BadStep):
        deta_x(ps, spec, 0.5, eps=0.0)
    with pytest.raises(OutOfRange):
        deta_x(ps, spec, 1.0)
    with pytest.raises(OutOfRange):
        deta_x(ps, spec, 0.125)


def test_deta_left_limit_at_breakpoint(p4):
    ps = sample_paths(p4, 32, 4, 10)
    spec = model(make_drift("zero"), deterministic(1.0))
    from wickwz.solver import reconstruct_x

    # left limit of the sawtooth at a breakpoint is 1
    assert np.allclose(deta_x(ps, spec, 0.5, side="left"), reconstruct_x(ps, spec, 0.5), rtol=1e-6)


def test_doubly_shifted_cache_matches_reference(p4, haar4):
    ps = sample_paths(p4, 32, 7, 10)
    spec = model(make_drift("tanh_logistic", a=1.0, c=2.0), lognormal_exp(1.0, haar4))
    r = np.array([0.0, 0.125, 0.25, 0.296875, 0.375])
    cached = doubly_shifted_x(ps, spec, 0.375, r)
    for j, rr in enumerate(r):
        ref = doubly_shifted_x_reference(ps, spec, 0.375, rr)
        assert np.max(np.abs(cached[:, j] / ref - 1)) <= 1e-10


class TestDerivativeEquation:
    def test_gbm_eta(self, p4):
        ps = sample_path(p4, 32, 3)
        spec = model(make_drift("zero"), gbm_indicator_init(1.0, 0.25), s=0.25)
        grid = np.linspace(0.25, 1.0, 25)
        res = dx_equation_residual(ps, spec, eta_direction(p4, 0.3), grid, 1e-3)
        assert res.max_abs_residual <= 1e-4

    def test_haar_kills_nonhomogeneous_term(self, p4, haar4):
        ps = sample_path(p4, 32, 3)
        spec = model(make_drift("tanh_logistic", a=1.0, c=2.0), lognormal_exp(1.0, haar4))
        res = dx_equation_residual(ps, spec, haar4, np.linspace(0, 1, 17), 1e-3)
        assert np.all(res.terms["nonhomogeneous"] == 0.0)
        assert res.max_abs_residual <= 1e-4

    def test_smooth_drift_eta(self, p4, haar4):
        ps = sample_path(p4, 32, 8)
        spec = model(make_drift("sin_drift", a=0.8, omega=3.0), lognormal_exp(1.0, haar4))
        res = dx_equation_residual(ps, spec, eta_direction(p4, 0.6), np.linspace(0, 1, 9), 1e-3)
        assert res.max_abs_residual <= 1e-4

    def test_zero_path_all_terms_vanish(self, p4, haar4):
        spec = model(make_drift("zero"), deterministic(1.0))
        res = dx_equation_residual(zero_path(p4), spec, haar4, np.linspace(0, 1, 5), 1e-3)
        for v in res.terms.values():
            assert np.all(v == 0.0)

    def test_rejects_batches(self, p4, haar4, batch):
        with pytest.raises(ValueError):
            dx_equation_residual(batch, model(make_drift("zero"), deterministic(1.0)), haar4, [0.5])


def test_inverse_moment_zero_order_and_flags(p4, haar4):
    d = np.array([0.5, 2.0, 3.0, 0.7])
    rep = inverse_moment(d, 0.0)
    assert rep.estimate == 1.0 and rep.nondegenerate
    rep = inverse_moment(np.array([0.0, 1.0, 2.0]), 5.0, trim=0.0)
    assert not rep.nondegenerate and rep.min_abs_derivative == 0.0
    doc = json.loads(inverse_moment(d, 2.0).to_json())
    assert {"q", "estimate", "ci_low", "ci_high", "min_abs_derivative", "trim"} <= set(doc)


def test_inverse_moment_needs_derivatives(p4):
    run = run_ensemble(model(make_drift("zero"), deterministic(1.0)), p4, 4, 3, 0)
    with pytest.raises(NoDerivatives):
        inverse_moment(run, 5.0)


def test_inverse_moment_lognormal_small_horizon():
    from wickwz.kernels import uniform_partition

    p = uniform_partition(4, 0.1)
    h = make_haar_direction(p)
    spec = model(make_drift("zero"), lognormal_exp(1.0, h))
    t = 0.0375
    d = np.concatenate([dhx_closed(sample_paths(p, 32, 31, 10_000, start=s), spec, h, t)
                        for s in range(0, 50_000, 10_000)])
    q = 2.0
    g2 = h.norm_sq + kernel_slice(p, 0, t).norm_sq
    exact = np.exp(q * (q + 1) * g2 / 2) * h.norm_sq ** -q
    rep = inverse_moment(d, q, trim=0.0)
    assert abs(rep.estimate - exact) <= 3 * rep.std_error


def test_write_derivative_csv(tmp_path):
    write_derivative_csv(tmp_path / "d.csv", [(0, 0.5, 1.0, 1.0000001, 1e-4)])
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "path_id,t,dhx_closed,dhx_fd,eps" and lines[1].startswith("0,0.5,")
