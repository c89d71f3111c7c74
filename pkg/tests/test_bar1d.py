import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sensoropt.bar1d import (
    BarSpec,
    analytic_displacement,
    analytic_jacobian_row,
    analytic_strain,
    brute_force_optimal_sets,
    increments,
    min_matrix,
    min_matrix_det,
    optimal_det,
    theorem_optimal_sets,
)
from sensoropt.errors import IndexOutOfRange, NotIncreasing
from sensoropt.verification import run_checks


def test_constants():
    b = BarSpec(P=2.0, E=4.0, A=0.5, ell=3.0)
    assert b.c == pytest.approx(3.0) and b.c_s == pytest.approx(1.0) and b.length == 30.0
    with pytest.raises(ValueError):
        BarSpec(E=0.0)


def test_undamaged_closed_forms():
    b = BarSpec()
    np.testing.assert_allclose(analytic_displacement(b), np.arange(11.0))
    np.testing.assert_allclose(analytic_strain(b), np.ones(10))
    alpha = np.ones(10)
    alpha[2] = 0.5
    u = analytic_displacement(b, alpha)
    assert u[2] == 2.0 and u[3] == 4.0 and u[10] == 11.0


def test_jacobian_rows():
    b = BarSpec(P=2.0)
    np.testing.assert_allclose(analytic_jacobian_row(b, "displacement", 3), [-2, -2, -2] + [0] * 7)
    np.testing.assert_allclose(analytic_jacobian_row(b, "strain", 4), [0, 0, 0, -2] + [0] * 6)
    with pytest.raises(IndexOutOfRange):
        analytic_jacobian_row(b, "displacement", 0)
    with pytest.raises(IndexOutOfRange):
        analytic_jacobian_row(b, "strain", 11)


def test_jacobian_rows_match_fd_of_closed_form():
    b = BarSpec()
    rng = np.random.default_rng(0)
    alpha = rng.uniform(0.3, 1, 10)
    h = 1e-6
    for k in range(10):
        d = np.zeros(10)
        d[k] = h
        fd = (analytic_displacement(b, alpha + d) - analytic_displacement(b, alpha - d)) / (2 * h)
        rows = np.array([analytic_jacobian_row(b, "displacement", j, alpha) for j in range(1, 11)])
        np.testing.assert_allclose(rows[:, k], fd[1:], rtol=1e-7, atol=1e-9)


def test_min_matrix_examples():
    assert min_matrix_det([5, 10]) == 25
    assert min_matrix_det([3, 6, 10]) == 36
    assert min_matrix_det([2, 5, 7, 10]) == 36
    np.testing.assert_array_equal(min_matrix([2, 5]), [[2, 2], [2, 5]])
    assert increments([2, 5, 7]) == [2, 3, 2]
    with pytest.raises(NotIncreasing):
        increments([3, 3])
    with pytest.raises(NotIncreasing):
        min_matrix_det([0, 4])


@given(st.sets(st.integers(1, 30), min_size=1, max_size=8))
def test_min_det_matches_numeric(nodes):
    S = sorted(nodes)
    assert min_matrix_det(S, check=False) == pytest.approx(np.linalg.det(min_matrix(S)), rel=1e-8)


def test_theorem_examples():
    assert theorem_optimal_sets(1) == [(10,)]
    assert theorem_optimal_sets(2) == [(5, 10)]
    assert theorem_optimal_sets(3) == [(3, 6, 10), (3, 7, 10), (4, 7, 10)]
    assert (2, 5, 7, 10) in theorem_optimal_sets(4)
    assert [optimal_det(m) for m in range(1, 5)] == [10, 25, 36, 36]


@pytest.mark.parametrize("N", range(1, 13))
def test_theorem_vs_enumeration(N):
    for m in range(1, N + 1):
        best, sets = brute_force_optimal_sets(m, N)
        assert theorem_optimal_sets(m, N) == sets
        assert best == optimal_det(m, N)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 16), st.data())
def test_theorem_sets_have_balanced_increments(N, data):
    m = data.draw(st.integers(1, N))
    for S in theorem_optimal_sets(m, N):
        inc = increments(S)
        assert S[-1] == N and max(inc) - min(inc) <= 1
        assert min_matrix_det(S, check=False) == optimal_det(m, N)


def test_brute_force_counts_all_subsets():
    assert brute_force_optimal_sets(4, 4) == (1, [(1, 2, 3, 4)])
    assert brute_force_optimal_sets(1, 7) == (7, [(7,)])


def test_verification_harness():
    checks = run_checks(seed=3)
    assert all(c.passed for c in checks), [(c.name, c.detail) for c in checks if not c.passed]
    bad = run_checks(seed=3, n_max=4, c_perturbation=1e-3)
    assert not bad[1].passed and bad[0].passed
