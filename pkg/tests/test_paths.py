import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wickwz.errors import BadResolution, InsufficientData, OutOfRange, PartitionMismatch
from wickwz.kernels import combine, indicator_direction, kernel_slice, make_haar_direction, uniform_partition
from wickwz.paths import (
    convergence_report,
    fine_grid,
    path_from_partition_values,
    polygonal_slope,
    polygonal_value,
    sample_path,
    sample_paths,
    shift_path,
    stoch_exp,
    sup_polygonal_error,
    write_path_csv,
    zero_path,
)


@pytest.fixture
def toy(p4):
    # B at the breakpoints: 0, 0.1, -0.3, 0.2, 0.5
    return path_from_partition_values(p4, [0.0, 0.1, -0.3, 0.2, 0.5], m=4)


def test_fine_grid_contains_breakpoints(p4):
    g = fine_grid(p4, 32)
    assert g.size == 129 and np.array_equal(g[::32], p4.points)
    with pytest.raises(BadResolution):
        fine_grid(p4, 0)


def test_sample_path_deterministic(p4):
    a, b = sample_path(p4, 32, seed=7), sample_path(p4, 32, seed=7)
    assert np.array_equal(a.values, b.values)
    assert a.values[0] == 0.0
    assert not np.array_equal(a.values, sample_path(p4, 32, seed=8).values)
    with pytest.raises(BadResolution):
        sample_path(p4, 0)


def test_batch_matches_single_paths(p4):
    batch = sample_paths(p4, 8, master_seed=3, n_paths=5, start=10)
    for row, idx in enumerate(range(10, 15)):
        assert np.array_equal(batch.values[row], sample_path(p4, 8, 3, idx).values)


def test_partition_values_exact(p4):
    ps = sample_path(p4, 16, 1)
    assert np.array_equal(ps.partition_values, ps.values[::16])


def test_terminal_law(p4):
    ps = sample_paths(p4, 4, master_seed=11, n_paths=100_000)
    b1 = ps.values[:, -1]
    n = b1.size
    assert abs(b1.mean()) <= 3 * b1.std() / np.sqrt(n)
    # SE of the sample variance of N(0,1) is sqrt(2/n)
    assert abs(b1.var() - 1.0) <= 3 * np.sqrt(2.0 / n)


def test_polygonal_examples(toy):
    assert polygonal_value(toy, 0.25) == pytest.approx(0.1)
    assert polygonal_value(toy, 0.375) == pytest.approx(-0.1)
    assert polygonal_value(toy, 0.5) == pytest.approx(-0.3)
    assert polygonal_value(toy, 1.0) == pytest.approx(0.5)
    assert polygonal_slope(toy, 0.3) == pytest.approx(-1.6)
    assert polygonal_slope(toy, 0.25) == pytest.approx(-1.6)
    with pytest.raises(OutOfRange):
        polygonal_slope(toy, 1.0)
    with pytest.raises(OutOfRange):
        polygonal_value(toy, 1.5)


def test_zero_path_slope(p4):
    z = zero_path(p4)
    assert np.all(polygonal_slope(z, np.linspace(0, 0.99, 20)) == 0.0)


def test_stoch_exp_example(p4):
    # B^pi_t - B^pi_s = 0.2 with <K, K> = 0.3125
    ps = path_from_partition_values(p4, [0.0, 0.1, 0.3, 0.3, 0.3], m=2)
    K = kernel_slice(p4, 0.0, 0.375)
    assert ps.wiener_integral(K) == pytest.approx(0.2, abs=1e-15)
    e = stoch_exp(ps, K)
    assert e.value == pytest.approx(np.exp(0.04375), rel=1e-14)
    assert e.value == pytest.approx(1.044721, abs=1e-6)
    assert stoch_exp(ps, kernel_slice(p4, 0.4, 0.4)).value == 1.0


def test_wiener_integral_against_riemann_sum(p4):
    # step integrand whose knots are fine nodes: the fine-grid Ito sum is exact
    ps = sample_path(p4, 32, 5)
    K = kernel_slice(p4, 0.1, 0.8)
    t = ps.fine_grid
    left = K(t[:-1])
    assert ps.wiener_integral(K) == pytest.approx(np.sum(left * np.diff(ps.values)), abs=1e-13)


def test_stoch_exp_unit_mean(p4):
    ps = sample_paths(p4, 4, 2, 100_000)
    v = stoch_exp(ps, kernel_slice(p4, 0.0, 0.625)).value
    assert abs(v.mean() - 1.0) <= 3 * v.std() / np.sqrt(v.size)


def test_stoch_exp_inverse_pair(p4):
    ps = sample_paths(p4, 8, 4, 50)
    K = kernel_slice(p4, 0.2, 0.9)
    prod = stoch_exp(ps, K).value * stoch_exp(ps, -K).value
    assert np.allclose(prod, np.exp(-K.norm_sq), rtol=1e-12)


def test_shift_identity_and_inverse(p4):
    ps = sample_path(p4, 16, 2)
    assert shift_path(ps, kernel_slice(p4, 0, 0.5), 0.0) is ps
    g = kernel_slice(p4, 0.1, 0.7)
    back = shift_path(shift_path(ps, g, 0.7), g, -0.7)
    assert np.max(np.abs(back.values - ps.values)) <= 1e-14


def test_shift_example(p4):
    ps = zero_path(p4)
    moved = shift_path(ps, kernel_slice(p4, 0, 0.375), 1.0)
    assert moved.value_at(1.0) == pytest.approx(0.375, abs=1e-15)
    with pytest.raises(PartitionMismatch):
        shift_path(ps, kernel_slice(uniform_partition(8), 0, 0.5))


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 1), st.floats(0, 1))
def test_shift_composition(a, b, s, t):
    p = uniform_partition(4)
    ps = sample_path(p, 8, 1)
    g1 = kernel_slice(p, min(s, t), max(s, t))
    g2 = make_haar_direction(p)
    twice = shift_path(shift_path(ps, g1, a), g2, b)
    once = shift_path(ps, combine([(a, g1), (b, g2)]))
    assert np.max(np.abs(twice.values - once.values)) <= 1e-13


def test_haar_integral_invariant_under_kernel_shift(p4, haar4, rng):
    ps = sample_paths(p4, 8, 6, 20)
    base = ps.wiener_integral(haar4)
    for s, t in rng.uniform(0, 1, (10, 2)):
        moved = shift_path(ps, kernel_slice(p4, min(s, t), max(s, t)), 1.3)
        assert np.max(np.abs(moved.wiener_integral(haar4) - base)) <= 1e-12


def test_shifted_wiener_integral_adds_pairing(p4):
    ps = sample_path(p4, 8, 3)
    g = indicator_direction(0.125, 0.625, 2.0)
    K = kernel_slice(p4, 0, 0.5)
    moved = shift_path(ps, g, 0.5)
    # <K_{0,0.5}, g> = 2 * |[0.125, 0.5)| = 0.75
    assert moved.wiener_integral(K) == pytest.approx(ps.wiener_integral(K) + 0.5 * 0.75, abs=1e-13)


def test_sup_error_zero_path():
    p = uniform_partition(16)
    assert np.all(sup_polygonal_error(zero_path(p, 4), 4) == 0.0)
    rep = convergence_report([0, 1], [4, 8, 16], m=4, sampler=lambda part, m, seed: zero_path(part, m))
    assert np.all(rep.errors == 0.0) and np.isnan(rep.slope)


def test_sup_error_matches_direct_interpolation():
    p = uniform_partition(8)
    ps = sample_path(p, 4, 9)
    coarse = uniform_partition(2)
    direct = np.interp(ps.fine_grid, coarse.points, ps.value_at(coarse.points))
    assert sup_polygonal_error(ps, 2) == pytest.approx(np.max(np.abs(direct - ps.values)), abs=1e-14)
    with pytest.raises(InsufficientData):
        sup_polygonal_error(ps, 3)


def test_convergence_report_needs_three_sizes():
    with pytest.raises(InsufficientData):
        convergence_report([0], [4])


def test_write_path_csv(tmp_path, p4):
    ps = sample_path(p4, 4, 1)
    out = tmp_path / "path.csv"
    write_path_csv(ps, out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["t", "B", "B_poly"] and len(rows) == 18
    assert float(rows[-1][1]) == float(rows[-1][2])
