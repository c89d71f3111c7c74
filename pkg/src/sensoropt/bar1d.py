"""Closed forms for the clamped-free axial bar under a tip load.

Element e (1-based) is a spring of stiffness alpha_e EA / l in series, so the
node-j displacement is c * sum_{e<=j} 1/alpha_e with c = P l / (EA). Around the
undamaged bar a displacement sensor at node j has Jacobian row
-c (1, ..., 1, 0, ..., 0) (j leading ones) and a strain sensor in element r has
-c_s e_r with c_s = P / (EA). Gram matrices of displacement rows are c^2 times
the "min" matrix [min(j_p, j_q)], whose determinant is the product of the
index increments.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import IndexOutOfRange, NotIncreasing


@dataclass(frozen=True)
class BarSpec:
    n_elements: int = 10
    P: float = 1.0
    E: float = 1.0
    A: float = 1.0
    ell: float = 1.0

    def __post_init__(self):
        if self.n_elements < 1:
            raise ValueError("n_elements must be positive")
        for name in ("P", "E", "A", "ell"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def c(self) -> float:
        return self.P * self.ell / (self.E * self.A)

    @property
    def c_s(self) -> float:
        return self.P / (self.E * self.A)

    @property
    def length(self) -> float:
        return self.n_elements * self.ell


def analytic_displacement(bar: BarSpec, alpha=None) -> np.ndarray:
    """u_j = c * sum_{e<=j} 1/alpha_e for j = 0..N_e (u_0 = 0)."""
    alpha = np.ones(bar.n_elements) if alpha is None else np.asarray(alpha, dtype=float)
    if alpha.shape != (bar.n_elements,):
        raise ValueError(f"alpha must have {bar.n_elements} entries")
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    return bar.c * np.concatenate([[0.0], np.cumsum(1.0 / alpha)])


def analytic_strain(bar: BarSpec, alpha=None) -> np.ndarray:
    alpha = np.ones(bar.n_elements) if alpha is None else np.asarray(alpha, dtype=float)
    return bar.c_s / alpha


def analytic_jacobian_row(bar: BarSpec, kind: str, location: int, alpha=None) -> np.ndarray:
    """Jacobian row w.r.t. alpha for a nodal displacement sensor (node j) or a strain sensor (element r).

    Evaluated at ``alpha`` (default: undamaged). Node 0 is clamped and gives a
    zero row, which is rejected as uninformative.
    """
    n = bar.n_elements
    alpha = np.ones(n) if alpha is None else np.asarray(alpha, dtype=float)
    row = np.zeros(n)
    if kind == "displacement":
        if not 1 <= location <= n:
            raise IndexOutOfRange(f"node {location} not in 1..{n} (node 0 is clamped and uninformative)")
        row[:location] = -bar.c / alpha[:location] ** 2
    elif kind == "strain":
        if not 1 <= location <= n:
            raise IndexOutOfRange(f"element {location} not in 1..{n}")
        row[location - 1] = -bar.c_s / alpha[location - 1] ** 2
    else:
        raise ValueError(f"unknown sensor kind {kind!r}")
    return row


def increments(nodes: Iterable[int]) -> list:
    nodes = [int(j) for j in nodes]
    prev, out = 0, []
    for j in nodes:
        if j <= prev:
            raise NotIncreasing(f"node set must satisfy 0 < j_1 < ... < j_m, got {nodes}")
        out.append(j - prev)
        prev = j
    return out


def min_matrix(nodes) -> np.ndarray:
    j = np.asarray(list(nodes), dtype=float)
    return np.minimum.outer(j, j)


def min_matrix_det(nodes, check: bool = True) -> int:
    """det [min(j_p, j_q)] as the exact integer product of increments.

    With ``check`` the product is compared against a floating-point determinant
    of the matrix itself (relative 1e-9).
    """
    inc = increments(nodes)
    det = math.prod(inc)
    if check and inc:
        numeric = float(np.linalg.det(min_matrix(nodes)))
        if abs(numeric - det) > 1e-9 * det:
            raise ArithmeticError(f"min-matrix determinant mismatch: {numeric} vs {det}")
    return det


def theorem_optimal_sets(m: int, N: int = 10) -> list:
    """Every node set whose increments are r copies of q+1 and m-r copies of q.

    q = floor(N / m), r = N - m q. Returned sorted lexicographically; each set ends at N.
    """
    if not 1 <= m <= N:
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={N}")
    q, r = divmod(N, m)
    out = []
    for big in itertools.combinations(range(m), r):
        inc = [q + 1 if p in big else q for p in range(m)]
        out.append(tuple(itertools.accumulate(inc)))
    return sorted(out)


def brute_force_optimal_sets(m: int, N: int = 10) -> tuple:
    """(best determinant, all maximizing sets) by enumerating every m-subset of 1..N."""
    best, sets = -1, []
    for S in itertools.combinations(range(1, N + 1), m):
        d = min_matrix_det(S, check=False)
        if d > best:
            best, sets = d, [S]
        elif d == best:
            sets.append(S)
    return best, sets


def optimal_det(m: int, N: int = 10) -> int:
    q, r = divmod(N, m)
    return (q + 1) ** r * q ** (m - r)
