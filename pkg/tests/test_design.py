import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sensoropt.design import (
    FisherMatrix,
    adjoint_weight,
    adjoint_weight_gram,
    criterion_value,
    d_objective,
    d_objective_and_gradient,
    fd_design_gradient,
    fisher_matrix,
    gram_matrix,
    phi_D,
    resolve_convention,
    robust_fisher,
    solve_with_F,
)
from sensoropt.errors import NoConvergence, SingularFisher
from sensoropt.model import ParameterVector, bar_model
from sensoropt.sensitivity import JacobianOperator, NoiseModel, assemble_jacobian
from sensoropt.sensors import SensorConfig, SensorSpec, position_params


def nodes(*js, sigma=1.0):
    return SensorConfig.broadcast([SensorSpec.displacement(float(j), sigma=sigma) for j in js])


def random_spd(rng, n, cond=1e3):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


# ---------------------------------------------------------------- criteria

def test_full_nodal_set_unit_determinant(bar, q_undamaged, nodal_config):
    F = fisher_matrix(assemble_jacobian(nodal_config, q_undamaged, bar), NoiseModel.from_config(nodal_config))
    assert abs(np.linalg.det(F.matrix) - 1.0) <= 1e-10
    assert abs(criterion_value(F, "D")) <= 1e-10


def test_gram_convention_two_sensors(bar, q_undamaged):
    cfg = nodes(5, 10)
    b = assemble_jacobian(cfg, q_undamaged, bar)
    R = NoiseModel.from_config(cfg)
    G = gram_matrix(b, R)
    np.testing.assert_allclose(G, [[5, 5], [5, 10]], atol=1e-12)
    assert abs(phi_D(b, R) + np.log(25.0)) <= 1e-12
    with pytest.raises(SingularFisher):
        phi_D(b, R, convention="fisher")


def test_identity_criteria():
    F = FisherMatrix(np.eye(4))
    assert criterion_value(F, "D") == pytest.approx(0.0, abs=1e-14)
    assert criterion_value(F, "A") == pytest.approx(4.0)
    assert criterion_value(F, "E") == pytest.approx(1.0)


def test_criteria_against_eigenvalues():
    rng = np.random.default_rng(4)
    for n in (2, 5, 9):
        A = random_spd(rng, n)
        lam = np.linalg.eigvalsh(A)
        F = FisherMatrix(A)
        assert criterion_value(F, "D") == pytest.approx(-np.sum(np.log(lam)), rel=1e-10)
        assert criterion_value(F, "A") == pytest.approx(np.sum(1 / lam), rel=1e-10)
        assert criterion_value(F, "E") == pytest.approx(lam[0], rel=1e-10)


def test_singular_fisher_and_regularize():
    F = FisherMatrix(np.diag([1.0, 0.0]))
    with pytest.raises(SingularFisher):
        criterion_value(F, "D")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        val = criterion_value(F, "D", regularize=True)
    assert any(issubclass(x.category, RuntimeWarning) for x in w)
    assert val == pytest.approx(-np.log(1e-10 * 0.5), rel=1e-6)
    assert criterion_value(F.with_eps(0.5), "D") == pytest.approx(-np.log(1.5 * 0.5))


def test_resolve_convention():
    assert resolve_convention(2, 10) == "gram"
    assert resolve_convention(2, 10, eps=1e-3) == "fisher"
    assert resolve_convention(10, 10) == "fisher"
    with pytest.raises(ValueError):
        resolve_convention(1, 1, convention="bogus")


def test_more_sensors_never_hurt(bar, q_undamaged):
    rng = np.random.default_rng(5)
    q = ParameterVector(rng.uniform(0.3, 1, 10))
    base = [SensorSpec.displacement(float(j)) for j in range(1, 11)]
    cfg = SensorConfig.broadcast(base)
    extra = SensorConfig.broadcast(base + [SensorSpec.displacement(3.3), SensorSpec.strain(7)])
    assert d_objective(bar, q, extra) <= d_objective(bar, q, cfg) + 1e-12


# ---------------------------------------------------------------- trace identity

@settings(max_examples=20, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_logdet_directional_derivative(n, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, cond=50)
    E = rng.standard_normal((n, n))
    dA = 0.5 * (E + E.T)
    exact = np.trace(np.linalg.solve(A, dA))
    errs = []
    for h in (1e-3, 5e-4):
        fd = (np.linalg.slogdet(A + h * dA)[1] - np.linalg.slogdet(A - h * dA)[1]) / (2 * h)
        errs.append(abs(fd - exact))
    assert errs[0] <= 1e-4 * max(1.0, abs(exact))
    assert errs[1] <= errs[0] + 1e-9


# ---------------------------------------------------------------- adjoint weight

def test_adjoint_weight_fisher_identity(bar, mixed):
    rng = np.random.default_rng(8)
    q = ParameterVector(rng.uniform(0.4, 1, 10))
    cfg = SensorConfig.broadcast([SensorSpec.displacement(j + 0.5, sigma=0.3) for j in range(10)] + [SensorSpec.strain(2)])
    b = assemble_jacobian(cfg, q, bar)
    R = NoiseModel.from_config(cfg)
    B = adjoint_weight(b, fisher_matrix(b, R), R)
    np.testing.assert_allclose(b.J.T @ B.matrix, np.eye(10), atol=1e-9)

    # rank-deficient fixture: J^T B + eps (F + eps I)^{-1} = I
    model, q0, cfg = mixed
    b = assemble_jacobian(cfg, q0, model)
    R = NoiseModel.from_config(cfg)
    F = fisher_matrix(b, R)
    eps = 0.3
    Be = adjoint_weight(b, F.with_eps(eps), R)
    lhs = b.J.T @ Be.matrix + eps * np.linalg.inv(F.with_eps(eps).matrix)
    np.testing.assert_allclose(lhs, np.eye(q0.size), atol=1e-9)


def test_adjoint_weight_gram_identity(bar, q_undamaged):
    cfg = nodes(3, 5.5, 9, sigma=0.4)
    b = assemble_jacobian(cfg, q_undamaged, bar)
    R = NoiseModel.from_config(cfg)
    B = adjoint_weight_gram(b, R)
    np.testing.assert_allclose(b.J @ B.matrix.T, np.eye(3), atol=1e-10)


# ---------------------------------------------------------------- design gradient

def random_interior_configs(rng, n):
    out = []
    for _ in range(n):
        m = int(rng.integers(2, 5))
        elems = rng.choice(10, size=m, replace=False)
        xs = np.sort(elems + rng.uniform(0.15, 0.85, m))
        out.append(xs)
    return out


def test_gradient_matches_fd_random_configs():
    rng = np.random.default_rng(11)
    model = bar_model(10)
    for xs in random_interior_configs(rng, 12):
        q0 = ParameterVector(rng.uniform(0.5, 1.0, 10))
        sig = rng.uniform(0.5, 2.0, xs.size)
        cfg = SensorConfig.broadcast([SensorSpec.displacement(x, sigma=s) for x, s in zip(xs, sig)])
        th = position_params(cfg)
        _, g = d_objective_and_gradient(model, q0, cfg, th)
        fd = fd_design_gradient(model, q0, cfg, th, h=1e-5)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_gradient_fd_order():
    rng = np.random.default_rng(12)
    model = bar_model(10)
    for xs in random_interior_configs(rng, 10):
        q0 = ParameterVector(rng.uniform(0.5, 1.0, 10))
        cfg = SensorConfig.broadcast([SensorSpec.displacement(x) for x in xs])
        th = position_params(cfg)
        _, g = d_objective_and_gradient(model, q0, cfg, th)
        # h small enough to stay inside each element, large enough that truncation dominates round-off
        h = 0.05 * min(min(x - np.floor(x), np.ceil(x) - x) for x in xs)
        e1 = np.linalg.norm(fd_design_gradient(model, q0, cfg, th, h=h) - g)
        e2 = np.linalg.norm(fd_design_gradient(model, q0, cfg, th, h=h / 2) - g)
        if e1 <= 1e-9 * np.linalg.norm(g):
            continue  # phi locally quadratic in these coordinates; nothing to resolve
        assert np.log2(e1 / e2) >= 1.9


def test_gradient_fisher_convention_mixed(mixed):
    """Fisher form with eps on the multi-case fixture, positions and weights."""
    from sensoropt.sensors import DesignParam

    model, q0, cfg = mixed
    from sensoropt.sensors import on_node

    th = [t for t in position_params(cfg) if not on_node(cfg.cases[t.case][t.index].x, model.mesh)]
    assert len(th) == 2
    th += [DesignParam(0, 1, "weight"), DesignParam(1, 1, "weight")]
    _, g = d_objective_and_gradient(model, q0, cfg, th, eps=1e-2)
    fd = fd_design_gradient(model, q0, cfg, th, h=1e-5, eps=1e-2)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_strain_position_not_differentiable(mixed):
    from sensoropt.errors import NotDifferentiable
    from sensoropt.sensors import DesignParam

    model, q0, cfg = mixed
    with pytest.raises(NotDifferentiable):
        d_objective_and_gradient(model, q0, cfg, [DesignParam(0, 2)], eps=1e-2)


# ---------------------------------------------------------------- robust averaging

def test_robust_fisher_linear_in_weights(bar):
    rng = np.random.default_rng(6)
    cfg = nodes(*range(1, 11))
    qa, qb = (ParameterVector(rng.uniform(0.3, 1, 10)) for _ in range(2))
    Fa = robust_fisher([(qa, 1.0)], cfg, bar).matrix
    Fb = robust_fisher([(qb, 1.0)], cfg, bar).matrix
    F = robust_fisher([(qa, 0.25), (qb, 0.75)], cfg, bar, eps=0.1)
    np.testing.assert_allclose(F.matrix, 0.25 * Fa + 0.75 * Fb + 0.1 * np.eye(10), rtol=1e-12)
    with pytest.raises(ValueError):
        robust_fisher([], cfg, bar)
    with pytest.raises(ValueError):
        robust_fisher([(qa, 0.0)], cfg, bar)


def test_robust_two_scenarios_single_sensor():
    # one parameter, one sensor at the tip: F(alpha) = (c / alpha^2)^2
    model = bar_model(1)
    cfg = nodes(1)
    F = robust_fisher([(ParameterVector([1.0]), 0.5), (ParameterVector([0.5]), 0.5)], cfg, model)
    assert F.matrix[0, 0] == pytest.approx(0.5 * 1.0 + 0.5 * 16.0, rel=1e-12)


# ---------------------------------------------------------------- CG on F

def test_cg_matches_cholesky_explicit():
    rng = np.random.default_rng(7)
    for n in (1, 3, 10, 20):
        A = random_spd(rng, n, cond=1e2)
        g = rng.standard_normal(n)
        res = solve_with_F(g, lambda v: A @ v, tol=1e-12, maxiter=2 * n)
        x = np.linalg.solve(A, g)
        assert np.linalg.norm(res.x - x) <= 1e-8 * np.linalg.norm(x)
        assert res.iterations <= 2 * n


def test_cg_matrix_free_fixture(mixed):
    model, q0, cfg = mixed
    op = JacobianOperator(model, q0, cfg)
    F = fisher_matrix(assemble_jacobian(cfg, q0, model), NoiseModel.from_config(cfg), eps=1e-3).matrix
    g = np.arange(1.0, q0.size + 1)
    res = solve_with_F(g, lambda v: op.fisher_matvec(v) + 1e-3 * v, tol=1e-12, maxiter=4 * q0.size)
    x = np.linalg.solve(F, g)
    assert np.linalg.norm(res.x - x) <= 1e-8 * np.linalg.norm(x)


def test_cg_zero_rhs_and_no_convergence():
    assert solve_with_F(np.zeros(3), lambda v: v).iterations == 0
    A = np.diag(np.geomspace(1, 1e8, 30))
    with pytest.raises(NoConvergence) as info:
        solve_with_F(np.ones(30), lambda v: A @ v, tol=1e-14, maxiter=3)
    assert info.value.iterations == 3
