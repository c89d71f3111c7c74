"""1D bar finite-element model: stiffness assembly, state solves, parameter sensitivities.

Nodes are numbered 0..N_e and element ``e`` (0-based) connects nodes ``e`` and
``e + 1``. Boundary conditions are applied by eliminating the fixed nodes, so
every matrix that lives in "state space" is indexed by the free nodes only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import NonSPDError, SolveFailure, UnknownParameterComponent

COMPONENTS = ("alpha", "beta", "f_dT")
DEFAULT_ALPHA_MIN = 1e-3
RESIDUAL_RTOL = 1e-10


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh1D:
    """Two-node bar elements on a line.

    ``fixed_dofs`` are node indices with prescribed zero displacement.
    ``area`` is the (constant) cross-sectional area.
    """

    node_coords: np.ndarray
    fixed_dofs: tuple = (0,)
    area: float = 1.0

    def __post_init__(self):
        x = _frozen(self.node_coords)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("node_coords must be a 1D array with at least two nodes")
        if np.any(np.diff(x) <= 0):
            raise ValueError("node_coords must be strictly increasing")
        fixed = tuple(sorted(set(int(d) for d in self.fixed_dofs)))
        if any(d < 0 or d >= x.size for d in fixed):
            raise ValueError(f"fixed dof out of range: {fixed}")
        if self.area <= 0:
            raise ValueError("area must be positive")
        object.__setattr__(self, "node_coords", x)
        object.__setattr__(self, "fixed_dofs", fixed)

    @classmethod
    def uniform(cls, n_elements: int, ell: float = 1.0, fixed_dofs=(0,), area: float = 1.0):
        return cls(np.arange(n_elements + 1) * float(ell), fixed_dofs, area)

    @property
    def n_nodes(self) -> int:
        return self.node_coords.size

    @property
    def n_elements(self) -> int:
        return self.node_coords.size - 1

    @property
    def element_lengths(self) -> np.ndarray:
        return np.diff(self.node_coords)

    @property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[list(self.fixed_dofs)] = False
        return np.flatnonzero(mask)

    @property
    def n_free(self) -> int:
        return self.n_nodes - len(self.fixed_dofs)

    def free_index(self) -> np.ndarray:
        """Map node index -> position among free dofs (-1 for fixed nodes)."""
        idx = -np.ones(self.n_nodes, dtype=int)
        idx[self.free_dofs] = np.arange(self.n_free)
        return idx

    def restrict(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float)[..., self.free_dofs]

    def expand(self, v_free) -> np.ndarray:
        v_free = np.asarray(v_free, dtype=float)
        out = np.zeros(v_free.shape[:-1] + (self.n_nodes,))
        out[..., self.free_dofs] = v_free
        return out


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """Inversion parameters q = (alpha, beta, f_dT).

    alpha  -- elementwise stiffness scalings in [alpha_min, 1]
    beta   -- Young's modulus (single scalar; K is linear in it)
    f_dT   -- coefficients of the thermal load basis vectors

    ``active`` lists which components form the flat vector q, in that order.
    Inactive components are held at their stored values.
    """

    alpha: np.ndarray
    beta: float = 1.0
    f_dT: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active: tuple = ("alpha",)
    alpha_min: float = DEFAULT_ALPHA_MIN

    def __post_init__(self):
        alpha = _frozen(self.alpha)
        f_dT = _frozen(self.f_dT).reshape(-1)
        active = tuple(self.active)
        for name in active:
            if name not in COMPONENTS:
                raise UnknownParameterComponent(name)
        if len(set(active)) != len(active):
            raise ValueError(f"duplicate components in {active}")
        if not self.alpha_min > 0:
            raise ValueError("alpha_min must be positive")
        lo = self.alpha_min * (1 - 1e-12)
        if alpha.ndim != 1 or np.any(alpha < lo) or np.any(alpha > 1 + 1e-12):
            raise ValueError(f"alpha must lie in [{self.alpha_min}, 1]")
        if not self.beta > 0:
            raise ValueError("beta (Young's modulus) must be positive")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "f_dT", f_dT)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "beta", float(self.beta))

    def _size(self, name):
        return {"alpha": self.alpha.size, "beta": 1, "f_dT": self.f_dT.size}[name]

    @property
    def layout(self) -> dict:
        out, start = {}, 0
        for name in self.active:
            n = self._size(name)
            out[name] = slice(start, start + n)
            start += n
        return out

    @property
    def size(self) -> int:
        return sum(self._size(name) for name in self.active)

    def flat(self) -> np.ndarray:
        parts = {"alpha": self.alpha, "beta": np.array([self.beta]), "f_dT": self.f_dT}
        if not self.active:
            return np.zeros(0)
        return np.concatenate([parts[name] for name in self.active])

    def with_flat(self, q) -> "ParameterVector":
        q = np.asarray(q, dtype=float)
        if q.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {q.shape}")
        kw = {"alpha": self.alpha, "beta": self.beta, "f_dT": self.f_dT}
        for name, sl in self.layout.items():
            kw[name] = q[sl][0] if name == "beta" else q[sl]
        return ParameterVector(active=self.active, alpha_min=self.alpha_min, **kw)

    def labels(self) -> list:
        out = []
        for name in self.active:
            if name == "beta":
                out.append("beta")
            else:
                out.extend(f"{name}[{k}]" for k in range(self._size(name)))
        return out


@dataclass(frozen=True, eq=False)
class LoadCase:
    f: np.ndarray
    id: int | str = 0

    def __post_init__(self):
        f = _frozen(self.f)
        if not np.all(np.isfinite(f)):
            raise ValueError("load vector has non-finite entries")
        object.__setattr__(self, "f", f)

    @classmethod
    def tip_load(cls, mesh: Mesh1D, P: float, id: int | str = 0):
        f = np.zeros(mesh.n_nodes)
        f[-1] = P
        return cls(f, id)


@dataclass(frozen=True, eq=False)
class StiffnessMatrix:
    """Free-dof stiffness with its Cholesky factor (computed once, read-only)."""

    matrix: np.ndarray
    mesh: Mesh1D
    factor: tuple

    def solve(self, rhs) -> np.ndarray:
        """Solve K x = rhs for free-dof right-hand side(s) (vector or columns)."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.matrix.shape[0]:
            raise SolveFailure(f"rhs has {rhs.shape[0]} rows, expected {self.matrix.shape[0]}")
        if rhs.size == 0:
            return np.zeros_like(rhs)
        x = linalg.cho_solve(self.factor, rhs)
        res = self.matrix @ x - rhs
        scale = np.linalg.norm(rhs, axis=0)
        bad = np.linalg.norm(res, axis=0) > RESIDUAL_RTOL * np.maximum(scale, np.finfo(float).tiny)
        if np.any(bad & (scale > 0)) or not np.all(np.isfinite(x)):
            raise SolveFailure("linear solve residual above tolerance")
        return x


def element_stiffness(beta: float, area: float, length: float) -> np.ndarray:
    k = beta * area / length
    return k * np.array([[1.0, -1.0], [-1.0, 1.0]])


def assemble_stiffness(q: ParameterVector, mesh: Mesh1D) -> StiffnessMatrix:
    """K(alpha, beta) = sum_e alpha_e K_e(beta), reduced to the free dofs."""
    if q.alpha.size != mesh.n_elements:
        raise ValueError(f"alpha has {q.alpha.size} entries, mesh has {mesh.n_elements} elements")
    n = mesh.n_nodes
    K = np.zeros((n, n))
    for e, ell in enumerate(mesh.element_lengths):
        K[e:e + 2, e:e + 2] += q.alpha[e] * element_stiffness(q.beta, mesh.area, ell)
    free = mesh.free_dofs
    Kf = K[np.ix_(free, free)]
    if Kf.size == 0:
        raise NonSPDError("no free dofs")
    try:
        factor = linalg.cho_factor(Kf, lower=True, check_finite=True)
    except linalg.LinAlgError as exc:
        raise NonSPDError(
            "stiffness matrix is not positive definite (missing constraints or inadmissible parameters)"
        ) from exc
    # exactly singular K (e.g. no constraints) can survive factorization through round-off
    pivots = np.diag(factor[0]) ** 2
    if pivots.min() <= 1e-13 * np.max(np.diag(Kf)):
        raise NonSPDError("stiffness matrix is numerically singular (missing constraints?)")
    Kf.setflags(write=False)
    return StiffnessMatrix(Kf, mesh, factor)


def thermal_load(q: ParameterVector, thermal_basis, n_nodes: int) -> np.ndarray:
    """Nodal thermal load sum_k f_dT[k] * basis[k]."""
    if q.f_dT.size == 0:
        return np.zeros(n_nodes)
    basis = np.asarray(thermal_basis, dtype=float).reshape(q.f_dT.size, n_nodes)
    return q.f_dT @ basis


def solve_state(K: StiffnessMatrix, load: LoadCase, f_dT=None) -> np.ndarray:
    """Full nodal displacement for K u = f + f_dT (fixed nodes are zero)."""
    mesh = K.mesh
    rhs = load.f if f_dT is None else load.f + np.asarray(f_dT, dtype=float)
    return mesh.expand(K.solve(mesh.restrict(rhs)))


def element_strain(u, mesh: Mesh1D) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != mesh.n_nodes:
        raise ValueError(f"state has {u.shape[-1]} entries, mesh has {mesh.n_nodes} nodes")
    return np.diff(u, axis=-1) / mesh.element_lengths


def _check_components(q0: ParameterVector, thermal_basis):
    for name in q0.active:
        if name not in COMPONENTS:
            raise UnknownParameterComponent(name)
    if "f_dT" in q0.active and q0.f_dT.size and thermal_basis is None:
        raise ValueError("f_dT is active but no thermal basis was given")


def assemble_param_rhs(q0: ParameterVector, u, mesh: Mesh1D, thermal_basis=None) -> np.ndarray:
    """Parameter-to-RHS operator C = d f_dT/dq - (dK/dq) u on the free dofs.

    Returns an ``(n_free, N_q)`` matrix whose column k is the right-hand side of the
    linearized state equation for a unit perturbation of q_k.
    """
    _check_components(q0, thermal_basis)
    u = np.asarray(u, dtype=float)
    cols = np.zeros((mesh.n_nodes, q0.size))
    lengths = mesh.element_lengths
    for name, sl in q0.layout.items():
        if name == "alpha":
            for e in range(mesh.n_elements):
                ke = element_stiffness(q0.beta, mesh.area, lengths[e])
                cols[e:e + 2, sl.start + e] = -ke @ u[e:e + 2]
        elif name == "beta":
            # K is linear in beta, so dK/dbeta u = K u / beta
            for e in range(mesh.n_elements):
                ke = q0.alpha[e] * element_stiffness(1.0, mesh.area, lengths[e])
                cols[e:e + 2, sl.start] -= ke @ u[e:e + 2]
        elif name == "f_dT":
            if q0.f_dT.size:
                basis = np.asarray(thermal_basis, dtype=float).reshape(q0.f_dT.size, mesh.n_nodes)
                cols[:, sl] = basis.T
        else:
            raise UnknownParameterComponent(name)
    return cols[mesh.free_dofs]


def param_rhs_matvec(q0: ParameterVector, u, mesh: Mesh1D, v, thermal_basis=None) -> np.ndarray:
    """C v without forming C (free-dof vector)."""
    _check_components(q0, thermal_basis)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.zeros(mesh.n_nodes)
    lay = q0.layout
    ext = np.diff(u)
    k_unit = mesh.area / mesh.element_lengths
    # element force for unit alpha: k_e * (u_{e+1} - u_e); -K_e u_e = [+f, -f]
    scale = np.zeros(mesh.n_elements)
    if "alpha" in lay:
        scale += v[lay["alpha"]] * q0.beta
    if "beta" in lay:
        scale += v[lay["beta"]][0] * q0.alpha
    force = scale * k_unit * ext
    out[:-1] += force
    out[1:] -= force
    if "f_dT" in lay and q0.f_dT.size:
        basis = np.asarray(thermal_basis, dtype=float).reshape(q0.f_dT.size, mesh.n_nodes)
        out += v[lay["f_dT"]] @ basis
    return out[mesh.free_dofs]


def param_rhs_rmatvec(q0: ParameterVector, u, mesh: Mesh1D, lam_free, thermal_basis=None) -> np.ndarray:
    """C^T lam for a free-dof vector lam, without forming C."""
    _check_components(q0, thermal_basis)
    u = np.asarray(u, dtype=float)
    lam = mesh.expand(lam_free)
    out = np.zeros(q0.size)
    k_unit = mesh.area / mesh.element_lengths
    # lam_e^T (-K_e^unit u_e) = -k_unit * (lam_{e+1} - lam_e) * (u_{e+1} - u_e)
    w = -k_unit * np.diff(lam) * np.diff(u)
    for name, sl in q0.layout.items():
        if name == "alpha":
            out[sl] = q0.beta * w
        elif name == "beta":
            out[sl] = q0.alpha @ w
        elif name == "f_dT" and q0.f_dT.size:
            basis = np.asarray(thermal_basis, dtype=float).reshape(q0.f_dT.size, mesh.n_nodes)
            out[sl] = basis @ lam
    return out


@dataclass(frozen=True, eq=False)
class StructuralModel:
    """Mesh, load cases, and thermal load basis for one structure."""

    mesh: Mesh1D
    load_cases: tuple
    thermal_basis: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        cases = tuple(self.load_cases)
        if not cases:
            raise ValueError("at least one load case is required")
        for lc in cases:
            if lc.f.shape != (self.mesh.n_nodes,):
                raise ValueError(f"load case {lc.id}: expected {self.mesh.n_nodes} nodal forces")
        basis = np.asarray(self.thermal_basis, dtype=float)
        basis = basis.reshape(-1, self.mesh.n_nodes) if basis.size else np.zeros((0, self.mesh.n_nodes))
        basis.setflags(write=False)
        object.__setattr__(self, "load_cases", cases)
        object.__setattr__(self, "thermal_basis", basis)

    @property
    def n_cases(self) -> int:
        return len(self.load_cases)

    def stiffness(self, q: ParameterVector) -> StiffnessMatrix:
        return assemble_stiffness(q, self.mesh)

    def thermal(self, q: ParameterVector) -> np.ndarray:
        if q.f_dT.size != self.thermal_basis.shape[0]:
            raise ValueError(
                f"{q.f_dT.size} thermal coefficients for {self.thermal_basis.shape[0]} basis vectors"
            )
        return thermal_load(q, self.thermal_basis, self.mesh.n_nodes)

    def states(self, q: ParameterVector, K: StiffnessMatrix | None = None) -> list:
        K = self.stiffness(q) if K is None else K
        fT = self.thermal(q)
        return [solve_state(K, lc, fT) for lc in self.load_cases]

    def param_rhs(self, q0: ParameterVector, u) -> np.ndarray:
        return assemble_param_rhs(q0, u, self.mesh, self.thermal_basis)


def bar_model(
    n_elements: int = 10,
    P: float = 1.0,
    A: float = 1.0,
    ell: float = 1.0,
    thermal_basis: Sequence | None = None,
) -> StructuralModel:
    """Clamped-free bar with a tip load P: the standard verification fixture.

    Young's modulus is a parameter (``ParameterVector.beta``), not part of the model.
    """
    mesh = Mesh1D.uniform(n_elements, ell, fixed_dofs=(0,), area=A)
    basis = np.zeros((0, mesh.n_nodes)) if thermal_basis is None else thermal_basis
    return StructuralModel(mesh, (LoadCase.tip_load(mesh, P),), basis)
