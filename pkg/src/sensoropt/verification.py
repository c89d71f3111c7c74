"""Cross-checks of the finite-element pipeline against the closed-form bar results."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import bar1d
from .model import ParameterVector, bar_model, element_strain
from .placement import CandidatePool, SubsetScorer, exhaustive_select, greedy_select
from .sensitivity import assemble_jacobian
from .sensors import SensorConfig, SensorSpec


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _random_alphas(rng, n_draws, n, lo=0.05):
    return rng.uniform(lo, 1.0, size=(n_draws, n))


def check_displacements(bar, rng, n_draws=100, tol=1e-10):
    model = bar_model(bar.n_elements, bar.P, bar.A, bar.ell)
    err = 0.0
    for alpha in _random_alphas(rng, n_draws, bar.n_elements):
        q = ParameterVector(alpha, beta=bar.E)
        u = model.states(q)[0]
        err = max(err, np.max(np.abs(u - bar1d.analytic_displacement(bar, alpha))))
        eps_fe = element_strain(u, model.mesh)
        err = max(err, np.max(np.abs(eps_fe - bar1d.analytic_strain(bar, alpha))))
    return Check("displacement/strain closed form", err <= tol, f"max abs error {err:.3e} over {n_draws} draws")


def check_jacobian_rows(bar, rng, n_draws=100, tol=1e-10, c_perturbation=0.0):
    """Displacement and strain rows of J at random alpha against the analytic rows.

    ``c_perturbation`` scales the analytic rows by (1 + c_perturbation); it exists
    so that the harness can demonstrate a failing check.
    """
    n = bar.n_elements
    model = bar_model(n, bar.P, bar.A, bar.ell)
    sensors = [SensorSpec.displacement(j * bar.ell) for j in range(1, n + 1)]
    sensors += [SensorSpec.strain(r) for r in range(1, n + 1)]
    cfg = SensorConfig.broadcast(sensors)
    alphas = np.vstack([np.ones((1, n)), _random_alphas(rng, n_draws - 1, n)])
    err = 0.0
    for alpha in alphas:
        J = assemble_jacobian(cfg, ParameterVector(alpha, beta=bar.E), model).J
        expect = [bar1d.analytic_jacobian_row(bar, "displacement", j, alpha) for j in range(1, n + 1)]
        expect += [bar1d.analytic_jacobian_row(bar, "strain", r, alpha) for r in range(1, n + 1)]
        expect = np.array(expect) * (1.0 + c_perturbation)
        err = max(err, np.max(np.abs(J - expect)))
    return Check("Jacobian rows closed form", err <= tol, f"max abs error {err:.3e} over {len(alphas)} draws")


def check_min_matrix(bar, tol=1e-9):
    """det of the FE Gram J J^T / c^{2m} against the increment product, for every node subset."""
    n = bar.n_elements
    model = bar_model(n, bar.P, bar.A, bar.ell)
    cfg = SensorConfig.broadcast([SensorSpec.displacement(j * bar.ell) for j in range(1, n + 1)])
    J = assemble_jacobian(cfg, ParameterVector(np.ones(n), beta=bar.E), model).J
    worst, count = 0.0, 0
    for m in range(1, n + 1):
        for S in itertools.combinations(range(1, n + 1), m):
            rows = J[[j - 1 for j in S]]
            fe = np.linalg.det(rows @ rows.T) / bar.c ** (2 * m)
            exact = bar1d.min_matrix_det(S)
            worst = max(worst, abs(fe - exact) / exact)
            count += 1
    return Check("min-matrix determinant vs FE Gram", worst <= tol, f"max rel error {worst:.3e} over {count} sets")


def check_theorem(n_min=1, n_max=12):
    bad = []
    for N in range(n_min, n_max + 1):
        for m in range(1, N + 1):
            best, sets = bar1d.brute_force_optimal_sets(m, N)
            thm = bar1d.theorem_optimal_sets(m, N)
            if sorted(sets) != thm or best != bar1d.optimal_det(m, N):
                bad.append((N, m))
    return Check(f"balanced-increment sets vs enumeration (N={n_min}..{n_max})", not bad,
                 "all match" if not bad else f"mismatch at (N, m) = {bad}")


KNOWN_OPTIMAL_SETS = {1: [(10,)], 2: [(5, 10)], 3: [(3, 6, 10), (4, 7, 10)], 4: [(2, 5, 7, 10)]}


def check_known_optimal_sets(bar):
    """FE exhaustive search on the 10-element bar reproduces the listed optimal sets."""
    if bar.n_elements != 10:
        return Check("explicit optimal sets m=1..4", True, "skipped (needs N_e = 10)")
    model = bar_model(10, bar.P, bar.A, bar.ell)
    pool = CandidatePool(tuple(SensorSpec.displacement(j * bar.ell) for j in range(1, 11)))
    scorer = SubsetScorer(pool, model, ParameterVector(np.ones(10), beta=bar.E))
    problems = []
    for m, expected in KNOWN_OPTIMAL_SETS.items():
        res = exhaustive_select(pool, m, scorer)
        co = [tuple(i + 1 for i in S) for S in res.co_optimal]
        det = scorer.determinant(res.best) / bar.c ** (2 * m)
        if any(S not in co for S in expected) or round(det) != bar1d.optimal_det(m, 10):
            problems.append(m)
    return Check("explicit optimal sets m=1..4", not problems,
                 "all listed sets co-optimal" if not problems else f"failed for m={problems}")


def check_greedy_gap(bar):
    if bar.n_elements != 10:
        return Check("greedy vs exhaustive (m=3)", True, "skipped (needs N_e = 10)")
    model = bar_model(10, bar.P, bar.A, bar.ell)
    pool = CandidatePool(tuple(SensorSpec.displacement(j * bar.ell) for j in range(1, 11)))
    scorer = SubsetScorer(pool, model, ParameterVector(np.ones(10), beta=bar.E))
    g = greedy_select(pool, 3, scorer)
    e = exhaustive_select(pool, 3, scorer)
    gd = round(scorer.determinant(g.best) / bar.c**6)
    ed = round(scorer.determinant(e.best) / bar.c**6)
    ok = gd == 30 and ed == 36
    return Check("greedy vs exhaustive (m=3)", ok, f"greedy det {gd} c^6, exhaustive det {ed} c^6")


def run_checks(bar=None, seed=0, n_max=12, c_perturbation=0.0) -> list:
    bar = bar1d.BarSpec() if bar is None else bar
    rng = np.random.default_rng(seed)
    return [
        check_displacements(bar, rng),
        check_jacobian_rows(bar, rng, c_perturbation=c_perturbation),
        check_min_matrix(bar),
        check_theorem(1, n_max),
        check_known_optimal_sets(bar),
        check_greedy_gap(bar),
    ]
