"""Fisher information, D/A/E criteria, adjoint weights and sensor-design gradients.

Two ways of scoring a sensor set under the D criterion are supported:

* ``"fisher"``: Phi_D = -log det(J^T R^{-1} J + eps I), the N_q x N_q form.
* ``"gram"``: Phi_D = -log det(R^{-1/2} J J^T R^{-1/2}), the m x m form. When there
  are fewer measurements than parameters the Fisher matrix is singular, and
  comparing equal-size sensor sets through the Gram determinant is the
  well-posed alternative. For square invertible J both forms agree.

In both cases dPhi_D = -2 tr(B^T dJ) with an adjoint weight B of matching form.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import NoConvergence, SingularFisher
from .model import ParameterVector, StructuralModel
from .sensitivity import JacobianBundle, NoiseModel, assemble_jacobian
from .sensors import DesignParam, SensorConfig, measurement_position_derivative

log = logging.getLogger(__name__)

CRITERIA = ("D", "A", "E")
CONVENTIONS = ("auto", "fisher", "gram")
AUTO_EPS_FACTOR = 1e-10


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    """F = J^T R^{-1} J (``information``) plus the regularization eps actually applied."""

    information: np.ndarray
    eps: float = 0.0
    q0: ParameterVector | None = None
    config: SensorConfig | None = None

    @property
    def matrix(self) -> np.ndarray:
        return self.information + self.eps * np.eye(self.information.shape[0])

    @property
    def size(self) -> int:
        return self.information.shape[0]

    def with_eps(self, eps: float) -> "FisherMatrix":
        return FisherMatrix(self.information, eps, self.q0, self.config)


def _jacobian_of(J):
    return J.J if isinstance(J, JacobianBundle) else np.atleast_2d(np.asarray(J, dtype=float))


def symmetrize(A) -> np.ndarray:
    return 0.5 * (A + A.T)


def fisher_matrix(J, noise: NoiseModel, eps: float = 0.0) -> FisherMatrix:
    """Accumulate J^T R^{-1} J and symmetrize; ``J`` is a bundle or an explicit matrix."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    Jm = _jacobian_of(J)
    info = symmetrize(Jm.T @ noise.inv(Jm))
    if isinstance(J, JacobianBundle):
        return FisherMatrix(info, eps, J.q0, J.config)
    return FisherMatrix(info, eps)


def cholesky(A, what="Fisher matrix") -> np.ndarray:
    """Lower Cholesky factor, raising SingularFisher if A is not numerically SPD."""
    try:
        L = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularFisher(f"{what} is singular (configuration locally unidentifiable)") from exc
    d = np.diag(L)
    if d.size and d.min() <= np.finfo(float).eps ** 0.75 * d.max():
        raise SingularFisher(f"{what} is numerically singular (configuration locally unidentifiable)")
    return L


def logdet_spd(A, what="Fisher matrix") -> float:
    L = cholesky(A, what)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _fisher_factor(F: FisherMatrix, regularize: bool):
    try:
        return cholesky(F.matrix), F.eps
    except SingularFisher:
        if not regularize or F.eps > 0:
            raise
        eps = AUTO_EPS_FACTOR * max(np.trace(F.information), np.finfo(float).tiny) / F.size
        warnings.warn(f"Fisher matrix singular; retrying with eps={eps:.3g}", RuntimeWarning, stacklevel=3)
        return cholesky(F.with_eps(eps).matrix), eps


def criterion_value(F: FisherMatrix, kind: str = "D", regularize: bool = False) -> float:
    """D: -log det(F + eps I); A: tr((F + eps I)^{-1}); E: lambda_min(F + eps I).

    With ``regularize=True`` a singular unregularized F is retried once with
    eps = 1e-10 tr(F) / N_q (a warning is issued); otherwise SingularFisher is raised.
    """
    if kind == "E":
        return float(linalg.eigh(F.matrix, eigvals_only=True)[0])
    if kind not in CRITERIA:
        raise ValueError(f"unknown criterion {kind!r}")
    L, _ = _fisher_factor(F, regularize)
    if kind == "D":
        return -2.0 * float(np.sum(np.log(np.diag(L))))
    Linv = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return float(np.sum(Linv ** 2))


def gram_matrix(J, noise: NoiseModel) -> np.ndarray:
    """R^{-1/2} J J^T R^{-1/2}, the m x m Gram form."""
    Jm = _jacobian_of(J)
    Jw = Jm / np.sqrt(noise.variances)[:, None]
    return symmetrize(Jw @ Jw.T)


def gram_logdet(J, noise: NoiseModel) -> float:
    return logdet_spd(gram_matrix(J, noise), "Gram matrix")


def resolve_convention(n_meas: int, n_params: int, eps: float = 0.0, convention: str = "auto") -> str:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}")
    if convention != "auto":
        return convention
    return "gram" if (n_meas < n_params and eps == 0) else "fisher"


def phi_D(bundle: JacobianBundle, noise: NoiseModel, eps: float = 0.0, convention: str = "auto") -> float:
    """D objective (to be minimized) under the chosen convention."""
    n_meas, n_params = bundle.shape
    if resolve_convention(n_meas, n_params, eps, convention) == "gram":
        return -gram_logdet(bundle, noise)
    return criterion_value(fisher_matrix(bundle, noise, eps), "D")


@dataclass(frozen=True, eq=False)
class AdjointWeight:
    """B (N_y x N_q) split into per-load-case blocks."""

    matrix: np.ndarray
    slices: tuple

    @property
    def blocks(self) -> list:
        return [self.matrix[s] for s in self.slices]


def adjoint_weight(bundle: JacobianBundle, F: FisherMatrix, noise: NoiseModel) -> AdjointWeight:
    """B = R^{-1} J (F + eps I)^{-1}, via the Cholesky factor of F + eps I."""
    J = bundle.J
    L = cholesky(F.matrix)
    Bt = linalg.cho_solve((L, True), noise.inv(J).T)
    return AdjointWeight(Bt.T, tuple(bundle.case_slices()))


def adjoint_weight_gram(bundle: JacobianBundle, noise: NoiseModel) -> AdjointWeight:
    """B = R^{-1/2} G^{-1} R^{-1/2} J for the Gram form G = R^{-1/2} J J^T R^{-1/2}."""
    J = bundle.J
    s = np.sqrt(noise.variances)
    L = cholesky(gram_matrix(J, noise), "Gram matrix")
    B = linalg.cho_solve((L, True), J / s[:, None]) / s[:, None]
    return AdjointWeight(B, tuple(bundle.case_slices()))


def grad_phiD(config: SensorConfig, thetas: Sequence[DesignParam], bundle: JacobianBundle,
              B: AdjointWeight) -> np.ndarray:
    """dPhi_D/dtheta = -2 sum_i tr(B_i^T (dM_i/dtheta) U_i) for each theta.

    Only local measurement-operator derivatives are needed; no extra solves.
    """
    mesh = bundle.linearization.model.mesh
    Bs = B.blocks
    out = np.zeros(len(thetas))
    for t, theta in enumerate(thetas):
        dMs = measurement_position_derivative(config, mesh, theta)
        total = 0.0
        for Bi, dMi, Ui in zip(Bs, dMs, bundle.sensitivities):
            if dMi.size and np.any(dMi):
                total += float(np.sum(Bi * (dMi @ Ui)))
        out[t] = -2.0 * total
    return out


def d_objective(model: StructuralModel, q0: ParameterVector, config: SensorConfig,
                noise: NoiseModel | None = None, eps: float = 0.0, convention: str = "auto",
                linearization=None) -> float:
    noise = NoiseModel.from_config(config) if noise is None else noise
    bundle = assemble_jacobian(config, q0, model, linearization)
    return phi_D(bundle, noise, eps, convention)


def d_objective_and_gradient(model: StructuralModel, q0: ParameterVector, config: SensorConfig,
                             thetas: Sequence[DesignParam], noise: NoiseModel | None = None,
                             eps: float = 0.0, convention: str = "auto", linearization=None):
    """Phi_D and its design gradient, following forward solve -> J -> F -> B -> gradient."""
    noise = NoiseModel.from_config(config) if noise is None else noise
    bundle = assemble_jacobian(config, q0, model, linearization)
    n_meas, n_params = bundle.shape
    if resolve_convention(n_meas, n_params, eps, convention) == "gram":
        phi = -gram_logdet(bundle, noise)
        B = adjoint_weight_gram(bundle, noise)
    else:
        F = fisher_matrix(bundle, noise, eps)
        phi = criterion_value(F, "D")
        B = adjoint_weight(bundle, F, noise)
    return phi, grad_phiD(config, thetas, bundle, B)


def fd_design_gradient(model: StructuralModel, q0: ParameterVector, config: SensorConfig,
                       thetas: Sequence[DesignParam], h: float = 1e-5, noise=None,
                       eps: float = 0.0, convention: str = "auto", linearization=None) -> np.ndarray:
    """Central finite differences of Phi_D with respect to sensor positions/weights."""
    from .sensitivity import Linearization

    lin = Linearization(model, q0) if linearization is None else linearization
    out = np.zeros(len(thetas))
    for t, th in enumerate(thetas):
        s = config.cases[th.case][th.index]
        vals = []
        for sign in (1.0, -1.0):
            if th.kind == "x":
                moved = s.moved(s.x + sign * h)
            else:
                moved = type(s)(s.kind, x=s.x, element=s.element, weight=s.weight + sign * h, sigma=s.sigma)
            cfg = config.with_sensor(th.case, th.index, moved)
            vals.append(d_objective(model, q0, cfg, noise, eps, convention, lin))
        out[t] = (vals[0] - vals[1]) / (2 * h)
    return out


def robust_fisher(scenarios: Sequence, config: SensorConfig, model: StructuralModel,
                  noise: NoiseModel | None = None, eps: float = 0.0) -> FisherMatrix:
    """Weighted scenario average sum_l w_l F(S; q0_l); eps is added once."""
    if not scenarios:
        raise ValueError("at least one scenario is required")
    noise = NoiseModel.from_config(config) if noise is None else noise
    total = None
    for q0, w in scenarios:
        if not w > 0:
            raise ValueError("scenario weights must be positive")
        F = fisher_matrix(assemble_jacobian(config, q0, model), noise).information
        total = w * F if total is None else total + w * F
    return FisherMatrix(symmetrize(total), eps, None, config)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def solve_with_F(g, apply_F: Callable, tol: float = 1e-10, maxiter: int | None = None, x0=None) -> CGResult:
    """Conjugate gradients for F x = g using only products with F.

    Stops when ||F x - g|| <= tol ||g||. Raises NoConvergence after ``maxiter``
    iterations (default 10 n).
    """
    g = np.asarray(g, dtype=float).reshape(-1)
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = g.size
    maxiter = 10 * max(n, 1) if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        return CGResult(np.zeros(n), 0, 0.0)
    r = g - apply_F(x) if x0 is not None else g.copy()
    p = r.copy()
    rr = r @ r
    for it in range(1, maxiter + 1):
        if np.sqrt(rr) <= tol * gnorm:
            return CGResult(x, it - 1, float(np.sqrt(rr) / gnorm))
        Fp = apply_F(p)
        pFp = p @ Fp
        if pFp <= 0:
            raise NoConvergence("F is not positive definite along a search direction",
                                float(np.sqrt(rr) / gnorm), it)
        a = rr / pFp
        x = x + a * p
        r = r - a * Fp
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    # recurrence residual can drift; confirm with a true residual
    res = np.linalg.norm(g - apply_F(x)) / gnorm
    if res <= tol:
        return CGResult(x, maxiter, float(res))
    raise NoConvergence(f"CG did not converge in {maxiter} iterations (residual {res:.3e})", float(res), maxiter)
