import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wickwz.errors import DimensionMismatch, NotSorted, OutOfRange, PartitionMismatch, TooFewPoints, WrongEndpoints
from wickwz.kernels import (
    Direction,
    Partition,
    check_direction,
    combine,
    eta_direction,
    indicator_direction,
    inner_product,
    kernel_coeffs,
    kernel_dt,
    kernel_slice,
    kernel_value,
    make_haar_direction,
    make_partition,
    step_inner,
    uniform_partition,
    weighted_kernel,
)

from conftest import simpson_u


def kernel_fn(p, s, t):
    """Pointwise ``K_t(u) - K_s(u)`` straight from the defining formula, for quadrature."""
    def f(u):
        k = np.clip(np.searchsorted(p.points, u, side="right") - 1, 0, p.n - 1)
        lo, d = p.points[k], p.deltas[k]
        return np.clip((t - lo) / d, 0, 1) - np.clip((s - lo) / d, 0, 1)
    return f


def test_make_partition_mesh():
    p = make_partition([0, 0.25, 0.5, 0.75, 1])
    assert p.n == 4 and p.mesh == 0.25 and p.T == 1.0
    assert make_partition([0, 0.1, 0.5, 1]).mesh == 0.5


@pytest.mark.parametrize("pts,err", [([0, 1, 0.5], NotSorted), ([0.1, 1], WrongEndpoints), ([0], TooFewPoints),
                                     ([0, 0.5, 0.5, 1], NotSorted)])
def test_make_partition_errors(pts, err):
    with pytest.raises(err):
        make_partition(pts)


def test_partition_json_roundtrip(p4):
    q = Partition.from_json(p4.to_json())
    assert q == p4 and json.loads(p4.to_json()) == [0, 0.25, 0.5, 0.75, 1]


def test_locate_conventions(p4):
    assert p4.locate(0.25) == 1  # breakpoints belong to the right
    assert p4.locate(1.0) == 3
    assert p4.locate(0.25 - 1e-13) == 1
    with pytest.raises(OutOfRange):
        p4.locate(1.1)


@pytest.mark.parametrize("u,expected", [(0.1, 1.0), (0.3, 0.5), (0.6, 0.0)])
def test_kernel_value_examples(p4, u, expected):
    assert kernel_value(p4, 0.375, u) == pytest.approx(expected, abs=1e-15)


def test_kernel_value_edges(p4):
    u = np.linspace(0, 0.999, 50)
    assert np.all(kernel_value(p4, 1.0, u) == 1.0)
    assert np.all(kernel_value(p4, 0.0, u) == 0.0)
    with pytest.raises(OutOfRange):
        kernel_value(p4, 0.5, 1.5)


@pytest.mark.parametrize("u,expected", [(0.3, 4.0), (0.1, 0.0), (0.8, 0.0)])
def test_kernel_dt_examples(p4, u, expected):
    assert kernel_dt(p4, 0.375, u) == expected


def test_kernel_dt_at_T(p4):
    with pytest.raises(OutOfRange):
        kernel_dt(p4, 1.0, 0.5)


def test_kernel_dt_is_time_derivative(p4):
    # central difference of K_t(u) in t, away from breakpoints
    u = np.array([0.05, 0.3, 0.6, 0.9])
    for t in (0.1, 0.4, 0.7):
        fd = (kernel_value(p4, t + 1e-6, u) - kernel_value(p4, t - 1e-6, u)) / 2e-6
        assert np.allclose(fd, kernel_dt(p4, t, u), atol=1e-6)


def test_inner_product_examples_by_quadrature(p4):
    a, b = kernel_slice(p4, 0, 0.375), kernel_slice(p4, 0, 0.625)
    fa, fb = kernel_fn(p4, 0, 0.375), kernel_fn(p4, 0, 0.625)
    # oracle first, then the frozen values
    assert simpson_u(lambda u: fa(u) ** 2) == pytest.approx(0.3125, abs=1e-5)
    assert simpson_u(lambda u: fa(u) * fb(u)) == pytest.approx(0.375, abs=1e-5)
    assert inner_product(a, a) == pytest.approx(0.3125, abs=1e-15)
    assert inner_product(a, b) == pytest.approx(0.375, abs=1e-15)
    assert inner_product(a, kernel_slice(p4, 0.4, 0.4)) == 0.0


def test_inner_product_partition_mismatch(p4):
    with pytest.raises(PartitionMismatch):
        inner_product(kernel_slice(p4, 0, 0.5), kernel_slice(uniform_partition(8), 0, 0.5))


def test_weighted_kernel(p4):
    two = weighted_kernel(p4, 0, 0.375, [2, 2, 2, 2])
    assert two.norm_sq == pytest.approx(1.25, abs=1e-14)
    assert np.array_equal(weighted_kernel(p4, 0.1, 0.7, np.ones(4)).coeffs, kernel_slice(p4, 0.1, 0.7).coeffs)
    assert weighted_kernel(p4, 0.1, 0.7, np.zeros(4)).norm_sq == 0.0
    with pytest.raises(DimensionMismatch):
        weighted_kernel(p4, 0, 0.5, [1, 1])
    with pytest.raises(OutOfRange):
        kernel_slice(p4, 0.6, 0.5)


def test_slice_values_bounded(p4):
    c = kernel_coeffs(p4, np.linspace(0, 1, 101))
    assert c.min() >= 0 and c.max() <= 1
    k = kernel_slice(p4, 0.3, 0.8)
    assert np.all(np.abs(k.coeffs) <= 1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.lists(st.floats(0.1, 3), min_size=4, max_size=4))
def test_inner_product_symmetric_and_cauchy_schwarz(times, sig):
    p = make_partition([0, 0.2, 0.45, 0.7, 1.0])
    s1, t1, s2, t2 = times
    a = weighted_kernel(p, min(s1, t1), max(s1, t1), sig)
    b = kernel_slice(p, min(s2, t2), max(s2, t2))
    ab = inner_product(a, b)
    assert ab == pytest.approx(inner_product(b, a), abs=1e-15)
    assert ab ** 2 <= a.norm_sq * b.norm_sq * (1 + 1e-12) + 1e-15


def test_haar_direction(p4, haar4):
    assert haar4.norm_sq == 1.0 and haar4.admissible
    rep = check_direction(p4, haar4)
    assert rep.admissible and rep.max_residual <= 1e-12
    assert np.all(np.abs(rep.interval_means) <= 1e-15)


def test_haar_orthogonal_to_kernels_by_quadrature(p4, haar4, rng):
    for t in rng.uniform(0, 1, 20):
        f = kernel_fn(p4, 0.0, t)
        assert abs(simpson_u(lambda u: f(u) * haar4(u))) < 1e-4
        assert abs(step_inner(haar4, kernel_slice(p4, 0.0, t))) <= 1e-12


def test_check_direction_violations(p4, haar4):
    ones = Direction([0, 1], [1.0])
    rep = check_direction(p4, ones)
    assert not rep.admissible and np.allclose(rep.interval_means, 1.0)
    broken = combine([(1.0, haar4), (1.0, indicator_direction(0.5, 0.625, 1.0)),
                      (1.0, indicator_direction(0.625, 0.75, 3.0))])
    rep = check_direction(p4, broken)
    assert not rep.admissible and rep.violating == (2,)


def test_eta_direction_sides(p4):
    assert np.array_equal(eta_direction(p4, 0.25).knots, [0.25, 0.5])
    assert np.array_equal(eta_direction(p4, 0.25, side="left").knots, [0.0, 0.25])
    assert eta_direction(p4, 1.0, side="left").values[0] == 4.0
    with pytest.raises(OutOfRange):
        eta_direction(p4, 1.0)


def test_direction_antiderivative_and_combine(p4):
    k = kernel_slice(p4, 0, 0.375)
    g = combine([(1.0, k), (-1.0, k)])
    assert np.all(g.values == 0.0)
    d = combine([(1.0, k)])
    assert d.antiderivative(1.0) == pytest.approx(0.375, abs=1e-15)
    with pytest.raises(DimensionMismatch):
        Direction([0, 1], [1.0, 2.0])
