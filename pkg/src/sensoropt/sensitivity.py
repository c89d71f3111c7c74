"""State sensitivities, the stacked Jacobian J(S), and matrix-free J, J^T, F products.

K is symmetric, so the adjoint solves K^T lambda = M^T w reuse the forward
Cholesky factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .model import (
    ParameterVector,
    StiffnessMatrix,
    StructuralModel,
    param_rhs_matvec,
    param_rhs_rmatvec,
)
from .sensors import SensorConfig, measurement_operators


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Diagonal measurement-noise covariance R (variances, one per measurement)."""

    variances: np.ndarray

    def __post_init__(self):
        v = np.array(self.variances, dtype=float).reshape(-1)
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("noise variances must be positive and finite")
        v.setflags(write=False)
        object.__setattr__(self, "variances", v)

    @classmethod
    def from_config(cls, config: SensorConfig) -> "NoiseModel":
        return cls(config.sigmas() ** 2)

    @classmethod
    def iid(cls, n: int, sigma: float = 1.0) -> "NoiseModel":
        return cls(np.full(n, float(sigma) ** 2))

    @property
    def size(self) -> int:
        return self.variances.size

    def inv(self, y) -> np.ndarray:
        """R^{-1} y (row-wise for matrices)."""
        y = np.asarray(y, dtype=float)
        return y / self.variances.reshape((-1,) + (1,) * (y.ndim - 1))

    def matrix(self) -> np.ndarray:
        return np.diag(self.variances)


class Linearization:
    """Cached forward quantities at a reference parameter q0: K, its factor, and the states u_i."""

    def __init__(self, model: StructuralModel, q0: ParameterVector):
        if q0.size == 0:
            raise ValueError("parameter vector has no active components (N_q = 0)")
        self.model = model
        self.q0 = q0
        self.K = model.stiffness(q0)
        self.states = model.states(q0, self.K)

    @property
    def n_params(self) -> int:
        return self.q0.size

    def param_rhs(self, i: int) -> np.ndarray:
        return self.model.param_rhs(self.q0, self.states[i])

    def rhs_matvec(self, i: int, v) -> np.ndarray:
        m = self.model
        return param_rhs_matvec(self.q0, self.states[i], m.mesh, v, m.thermal_basis)

    def rhs_rmatvec(self, i: int, lam) -> np.ndarray:
        m = self.model
        return param_rhs_rmatvec(self.q0, self.states[i], m.mesh, lam, m.thermal_basis)


def solve_state_sensitivities(K: StiffnessMatrix, C) -> np.ndarray:
    """U = K^{-1} C, column by column."""
    return K.solve(np.asarray(C, dtype=float))


@dataclass(frozen=True, eq=False)
class JacobianBundle:
    """Per-load-case blocks J_i = M_i U_i, with the U_i and M_i kept for design gradients."""

    blocks: tuple
    sensitivities: tuple
    operators: tuple
    q0: ParameterVector
    config: SensorConfig
    linearization: Linearization

    @property
    def J(self) -> np.ndarray:
        return np.vstack(self.blocks)

    @property
    def shape(self) -> tuple:
        return (sum(b.shape[0] for b in self.blocks), self.q0.size)

    def case_slices(self) -> list:
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.shape[0]))
            start += b.shape[0]
        return out


def assemble_jacobian(config: SensorConfig, q0: ParameterVector, model: StructuralModel,
                      linearization: Linearization | None = None) -> JacobianBundle:
    if config.n_cases != model.n_cases:
        raise ValueError(f"sensor config has {config.n_cases} load cases, model has {model.n_cases}")
    lin = Linearization(model, q0) if linearization is None else linearization
    ops = measurement_operators(config, model.mesh)
    Us, blocks = [], []
    for i, M in enumerate(ops):
        U = solve_state_sensitivities(lin.K, lin.param_rhs(i))
        Us.append(U)
        blocks.append(M.matrix @ U)
    return JacobianBundle(tuple(blocks), tuple(Us), tuple(ops), q0, config, lin)


class JacobianOperator:
    """Matrix-free J(S), J(S)^T and F = J^T R^{-1} J at a fixed q0."""

    def __init__(self, model: StructuralModel, q0: ParameterVector, config: SensorConfig,
                 noise: NoiseModel | None = None, linearization: Linearization | None = None):
        if config.n_cases != model.n_cases:
            raise ValueError(f"sensor config has {config.n_cases} load cases, model has {model.n_cases}")
        self.lin = Linearization(model, q0) if linearization is None else linearization
        self.config = config
        self.noise = NoiseModel.from_config(config) if noise is None else noise
        self.M = [op.matrix for op in measurement_operators(config, model.mesh)]
        self.n_params = q0.size
        self.n_meas = config.n_measurements
        if self.noise.size != self.n_meas:
            raise ValueError(f"noise model has {self.noise.size} entries for {self.n_meas} measurements")

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.size != self.n_params:
            raise ValueError(f"expected q-space vector of length {self.n_params}")
        out = []
        for i, M in enumerate(self.M):
            du = self.lin.K.solve(self.lin.rhs_matvec(i, v))
            out.append(M @ du)
        return np.concatenate(out)

    def rmatvec(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != self.n_meas:
            raise ValueError(f"expected y-space vector of length {self.n_meas}")
        out = np.zeros(self.n_params)
        start = 0
        for i, M in enumerate(self.M):
            wi = w[start:start + M.shape[0]]
            start += M.shape[0]
            lam = self.lin.K.solve(M.T @ wi)
            out += self.lin.rhs_rmatvec(i, lam)
        return out

    def fisher_matvec(self, z) -> np.ndarray:
        return self.rmatvec(self.noise.inv(self.matvec(z)))

    def jacobian(self) -> LinearOperator:
        return LinearOperator((self.n_meas, self.n_params), matvec=self.matvec,
                              rmatvec=self.rmatvec, dtype=float)

    def fisher(self) -> LinearOperator:
        return LinearOperator((self.n_params, self.n_params), matvec=self.fisher_matvec,
                              rmatvec=self.fisher_matvec, dtype=float)


def apply_J(v, q0: ParameterVector, config: SensorConfig, model: StructuralModel) -> np.ndarray:
    return JacobianOperator(model, q0, config).matvec(v)


def apply_Jt(w, q0: ParameterVector, config: SensorConfig, model: StructuralModel) -> np.ndarray:
    return JacobianOperator(model, q0, config).rmatvec(w)


def apply_F(z, q0: ParameterVector, config: SensorConfig, model: StructuralModel,
            noise: NoiseModel | None = None) -> np.ndarray:
    return JacobianOperator(model, q0, config, noise).fisher_matvec(z)
