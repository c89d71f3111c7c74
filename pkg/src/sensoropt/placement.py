"""Sensor selection: single-sensor rules, exhaustive and greedy subset search, continuous refinement."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .design import (
    cholesky,
    d_objective_and_gradient,
    resolve_convention,
    symmetrize,
)
from .errors import CombinatorialBlowup, EmptyPool, NoDescent, NotDifferentiable, SingularFisher
from .model import ParameterVector, StructuralModel
from .sensitivity import Linearization, NoiseModel, assemble_jacobian
from .sensors import DISPLACEMENT, DesignParam, SensorConfig, on_node, position_params

MAX_COMBINATIONS = 10**6
TIE_RTOL = 1e-9


# ---------------------------------------------------------------- single-sensor rules

def element_fisher(J_row, sigma: float = 1.0) -> np.ndarray:
    """Scalar Fisher information F_{j,k} = (J_j)_k^2 / sigma^2 for each parameter k."""
    return np.asarray(J_row, dtype=float) ** 2 / sigma**2


def average_fisher_scores(J_rows, sigmas=None) -> np.ndarray:
    J_rows = np.atleast_2d(np.asarray(J_rows, dtype=float))
    sig = np.ones(J_rows.shape[0]) if sigmas is None else np.broadcast_to(sigmas, J_rows.shape[:1])
    return np.sum(J_rows**2, axis=1) / np.asarray(sig, dtype=float) ** 2


def tied_best(scores, rtol: float = 1e-12) -> list:
    """Indices whose score is within rtol of the maximum (ascending)."""
    scores = np.asarray(scores, dtype=float)
    best = scores.max()
    return [int(i) for i in np.flatnonzero(scores >= best - rtol * abs(best))]


def single_sensor_avg_fisher(J_rows, sigmas=None, rtol: float = 1e-12) -> int:
    """Candidate maximizing ||J_j||^2 / sigma_j^2; ties go to the lowest index."""
    J_rows = np.asarray(J_rows, dtype=float)
    if J_rows.size == 0 or J_rows.shape[0] == 0:
        raise EmptyPool("no candidates")
    return tied_best(average_fisher_scores(J_rows, sigmas), rtol)[0]


@dataclass(frozen=True)
class DetectabilityConfig:
    delta_y: float
    delta_alpha_min: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.delta_y < 0 or not self.delta_alpha_min > 0 or not self.sigma > 0:
            raise ValueError("need delta_y >= 0, delta_alpha_min > 0, sigma > 0")


def detectability_threshold(cfg: DetectabilityConfig) -> float:
    """F_min = (delta_y / delta_alpha_min)^2 / sigma^2."""
    return (cfg.delta_y / cfg.delta_alpha_min) ** 2 / cfg.sigma**2


def truncated_score(F_row, F_min: float) -> float:
    return float(np.sum(np.maximum(np.asarray(F_row, dtype=float) - F_min, 0.0)))


def count_score(F_row, F_min: float) -> int:
    # "detectable" read as F >= F_min
    return int(np.sum(np.asarray(F_row, dtype=float) >= F_min))


# ---------------------------------------------------------------- subset scoring

@dataclass(frozen=True)
class CandidatePool:
    """Candidate sensors (broadcast to every load case) and indices that must be selected."""

    candidates: tuple
    must_include: tuple = ()

    def __post_init__(self):
        cands = tuple(self.candidates)
        if len(set(cands)) != len(cands):
            raise ValueError("candidate pool entries must be distinct")
        must = tuple(sorted(set(int(i) for i in self.must_include)))
        if any(i < 0 or i >= len(cands) for i in must):
            raise ValueError("must_include index out of range")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "must_include", must)

    def __len__(self):
        return len(self.candidates)


class SubsetScorer:
    """Scores index subsets of a candidate pool; larger is better.

    Candidate Jacobian rows are computed once per scenario. D scores are log
    determinants (Gram or Fisher form per the convention), A scores are
    -tr((F + eps I)^{-1}), E scores are lambda_min(F + eps I). Singular
    configurations score -inf.
    """

    def __init__(self, pool: CandidatePool, model: StructuralModel, scenarios, criterion: str = "D",
                 eps: float = 0.0, convention: str = "auto"):
        if len(pool) == 0:
            raise EmptyPool("candidate pool is empty")
        if criterion not in ("D", "A", "E"):
            raise ValueError(f"unknown criterion {criterion!r}")
        if isinstance(scenarios, ParameterVector):
            scenarios = [(scenarios, 1.0)]
        self.pool = pool
        self.criterion = criterion
        self.eps = eps
        self.convention = convention
        config = SensorConfig.broadcast(pool.candidates, model.n_cases)
        n_cases = model.n_cases
        self.weights = []
        self.rows = []
        for q0, w in scenarios:
            if not w > 0:
                raise ValueError("scenario weights must be positive")
            bundle = assemble_jacobian(config, q0, model)
            # (n_cand, n_cases, N_q)
            self.rows.append(np.stack(bundle.blocks, axis=1))
            self.weights.append(float(w))
        self.n_params = self.rows[0].shape[2]
        sig2 = np.array([s.sigma**2 for s in pool.candidates])
        self.variances = np.repeat(sig2[:, None], n_cases, axis=1)
        self.rows_per_sensor = n_cases

    def mode(self, k: int) -> str:
        n_meas = k * self.rows_per_sensor
        if self.criterion != "D" or len(self.rows) > 1:
            return "fisher"
        return resolve_convention(n_meas, self.n_params, self.eps, self.convention)

    def fisher(self, subset) -> np.ndarray:
        idx = list(subset)
        F = np.zeros((self.n_params, self.n_params))
        for w, rows in zip(self.weights, self.rows):
            J = rows[idx].reshape(-1, self.n_params)
            var = self.variances[idx].reshape(-1)
            F += w * (J.T @ (J / var[:, None]))
        return symmetrize(F) + self.eps * np.eye(self.n_params)

    def gram(self, subset) -> np.ndarray:
        idx = list(subset)
        J = self.rows[0][idx].reshape(-1, self.n_params)
        Jw = J / np.sqrt(self.variances[idx].reshape(-1))[:, None]
        return symmetrize(Jw @ Jw.T)

    def score(self, subset) -> float:
        subset = tuple(subset)
        try:
            if self.criterion == "D":
                A = self.gram(subset) if self.mode(len(subset)) == "gram" else self.fisher(subset)
                L = cholesky(A)
                return 2.0 * float(np.sum(np.log(np.diag(L))))
            F = self.fisher(subset)
            if self.criterion == "E":
                return float(linalg.eigh(F, eigvals_only=True)[0])
            L = cholesky(F)
            Linv = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
            return -float(np.sum(Linv**2))
        except SingularFisher:
            return -math.inf

    def determinant(self, subset) -> float:
        """det of the matrix the D score is the log of (Gram or Fisher form)."""
        subset = tuple(subset)
        A = self.gram(subset) if self.mode(len(subset)) == "gram" else self.fisher(subset)
        return float(np.linalg.det(A))


def _better(a: float, b: float) -> bool:
    """a beats b beyond the tie tolerance."""
    if b == -math.inf:
        return a > b
    return a > b + TIE_RTOL * max(1.0, abs(b))


def _tied(a: float, b: float) -> bool:
    if a == -math.inf or b == -math.inf:
        return a == b
    return abs(a - b) <= TIE_RTOL * max(1.0, abs(b))


@dataclass
class SelectionResult:
    best: tuple
    value: float
    co_optimal: list
    n_evaluated: int
    mode: str


def exhaustive_select(pool: CandidatePool, m: int, scorer: SubsetScorer,
                      max_combinations: int = MAX_COMBINATIONS) -> SelectionResult:
    """Enumerate every admissible m-subset; co-optimal sets reported in lexicographic order."""
    n = len(pool)
    if n == 0:
        raise EmptyPool("candidate pool is empty")
    must = pool.must_include
    if not len(must) <= m <= n:
        raise ValueError(f"need {len(must)} <= m <= {n}, got m={m}")
    rest = [i for i in range(n) if i not in must]
    count = math.comb(len(rest), m - len(must))
    if count > max_combinations:
        raise CombinatorialBlowup(f"{count} combinations exceed the limit of {max_combinations}")
    best_val, best_sets = -math.inf, []
    for extra in itertools.combinations(rest, m - len(must)):
        S = tuple(sorted(must + extra))
        v = scorer.score(S)
        if _better(v, best_val):
            best_val, best_sets = v, [S]
        elif _tied(v, best_val):
            best_sets.append(S)
    best_sets.sort()
    return SelectionResult(best_sets[0], best_val, best_sets, count, scorer.mode(m))


@dataclass
class GreedyResult:
    chain: list
    values: list

    @property
    def best(self) -> tuple:
        return self.chain[-1]

    @property
    def value(self) -> float:
        return self.values[-1]


def greedy_select(pool: CandidatePool, m: int, scorer: SubsetScorer) -> GreedyResult:
    """Add one sensor at a time, each step maximizing the score; ties go to the lowest index.

    The chain starts from the must-include set (if any); ``chain[k]`` is the set
    after the k-th step, so the sets are nested.
    """
    n = len(pool)
    if n == 0:
        raise EmptyPool("candidate pool is empty")
    if not 1 <= m <= n or m < len(pool.must_include):
        raise ValueError(f"need max(1, {len(pool.must_include)}) <= m <= {n}, got m={m}")
    current = tuple(pool.must_include)
    chain, values = [], []
    if current:
        chain.append(current)
        values.append(scorer.score(current))
    while len(current) < m:
        best_val, best_set = -math.inf, None
        for j in range(n):
            if j in current:
                continue
            S = tuple(sorted(current + (j,)))
            v = scorer.score(S)
            if best_set is None or _better(v, best_val):
                best_val, best_set = v, S
        current = best_set
        chain.append(current)
        values.append(best_val)
    return GreedyResult(chain, values)


# ---------------------------------------------------------------- continuous refinement

@dataclass
class DescentResult:
    config: SensorConfig
    trajectory: list  # (positions, phi) after each accepted step, starting with S0
    converged: bool
    reason: str
    iterations: int
    thetas: list = field(default_factory=list)


class _Projector:
    def __init__(self, config: SensorConfig, thetas, mesh, node_gap: float, min_sep: float):
        self.mesh = mesh
        self.ell = float(mesh.element_lengths.min())
        self.gap = node_gap * self.ell
        self.sep = min_sep * self.ell
        self.lo = mesh.node_coords[0] + self.gap
        self.hi = mesh.node_coords[-1] - self.gap
        self.thetas = thetas
        self.config = config

    def at_bound(self, x):
        return np.isclose(x, self.lo, rtol=0, atol=1e-12 * self.ell), np.isclose(x, self.hi, rtol=0, atol=1e-12 * self.ell)

    def __call__(self, x_new, x_old) -> np.ndarray:
        x = np.clip(np.asarray(x_new, dtype=float), self.lo, self.hi)
        nodes = self.mesh.node_coords
        for k in range(x.size):
            j = int(np.argmin(np.abs(nodes - x[k])))
            if abs(x[k] - nodes[j]) < self.gap:
                side = 1.0 if x_old[k] > nodes[j] else -1.0
                x[k] = nodes[j] + side * self.gap
        # keep moving sensors apart from every other displacement sensor of the same load case
        for k, th in enumerate(self.thetas):
            others = [x[i] for i, t in enumerate(self.thetas) if t.case == th.case and i != k]
            others += [s.x for r, s in enumerate(self.config.cases[th.case])
                       if s.kind == DISPLACEMENT and DesignParam(th.case, r) not in self.thetas]
            for o in others:
                if abs(x[k] - o) < self.sep:
                    side = 1.0 if x_old[k] >= o else -1.0
                    x[k] = o + side * self.sep
        return np.clip(x, self.lo, self.hi)


def apply_positions(config: SensorConfig, thetas, x) -> SensorConfig:
    for th, xk in zip(thetas, x):
        s = config.cases[th.case][th.index]
        config = config.with_sensor(th.case, th.index, s.moved(float(xk)))
    return config


def continuous_descent(model: StructuralModel, q0: ParameterVector, config: SensorConfig,
                       thetas: Sequence[DesignParam] | None = None, steps: int = 200, tol: float = 1e-8,
                       noise: NoiseModel | None = None, eps: float = 0.0, convention: str = "auto",
                       init_step: float = 0.1, shrink: float = 0.5, c1: float = 1e-4,
                       max_backtracks: int = 40, node_gap: float = 1e-6, min_sep: float = 1e-3) -> DescentResult:
    """Projected steepest descent on Phi_D over displacement-sensor coordinates.

    Each iteration tries a step whose largest coordinate move is ``init_step``
    element lengths, then backtracks by ``shrink`` until the Armijo condition
    with constant ``c1`` holds. Positions stay inside the bar, at least
    ``node_gap`` element lengths away from nodes and ``min_sep`` apart.
    """
    thetas = position_params(config) if thetas is None else list(thetas)
    for th in thetas:
        if th.kind != "x":
            raise ValueError("continuous descent moves sensor positions only")
    noise = NoiseModel.from_config(config) if noise is None else noise
    mesh = model.mesh
    lin = Linearization(model, q0)
    proj = _Projector(config, thetas, mesh, node_gap, min_sep)
    x = np.array([config.cases[t.case][t.index].x for t in thetas], dtype=float)
    for xk in x:
        if on_node(xk, mesh):
            raise NotDifferentiable(f"sensor at x={xk} sits on a node")

    def evaluate(cfg):
        return d_objective_and_gradient(model, q0, cfg, thetas, noise, eps, convention, lin)

    phi, g = evaluate(config)
    trajectory = [(x.copy(), phi)]
    ell = proj.ell
    for it in range(steps):
        lo, hi = proj.at_bound(x)
        pg = np.where((lo & (g > 0)) | (hi & (g < 0)), 0.0, g)
        if np.linalg.norm(pg) <= tol:
            return DescentResult(config, trajectory, True, "gradient below tolerance", it, thetas)
        t = init_step * ell / np.max(np.abs(pg))
        accepted = False
        for _ in range(max_backtracks):
            x_new = proj(x - t * pg, x)
            if np.allclose(x_new, x, rtol=0, atol=1e-14 * ell):
                break
            cfg_new = apply_positions(config, thetas, x_new)
            try:
                phi_new, g_new = evaluate(cfg_new)
            except (SingularFisher, NotDifferentiable):
                t *= shrink
                continue
            if phi_new <= phi + c1 * min(float(g @ (x_new - x)), 0.0):
                accepted = True
                break
            t *= shrink
        if not accepted:
            if it == 0:
                raise NoDescent("backtracking found no decrease from the initial configuration")
            return DescentResult(config, trajectory, False, "line search exhausted", it, thetas)
        x, phi, g, config = x_new, phi_new, g_new, cfg_new
        trajectory.append((x.copy(), phi))
    return DescentResult(config, trajectory, False, "step budget exhausted", steps, thetas)
