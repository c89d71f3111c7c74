"""Sensor specifications and measurement operators for the 1D bar.

Displacement sensors sit at a coordinate ``x`` and interpolate the two nodal
values of the element containing it. Strain sensors are attached to an element,
numbered 1..N_e, and read (u_r - u_{r-1}) / l_r. Every row is scaled by the
sensor weight. Columns are indexed by the free dofs of the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyConfig, LocationOutOfDomain, NotDifferentiable
from .model import Mesh1D

DISPLACEMENT = "displacement"
STRAIN = "strain"
KINDS = (DISPLACEMENT, STRAIN)

# relative distance (in element lengths) below which a coordinate counts as "on a node"
NODE_TOL = 1e-12


@dataclass(frozen=True)
class SensorSpec:
    kind: str
    x: float | None = None
    element: int | None = None
    weight: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sensor kind {self.kind!r}")
        if self.kind == DISPLACEMENT:
            if self.x is None or self.element is not None:
                raise ValueError("displacement sensors need 'x' and no 'element'")
            object.__setattr__(self, "x", float(self.x))
        else:
            if self.element is None or self.x is not None:
                raise ValueError("strain sensors need 'element' and no 'x'")
            object.__setattr__(self, "element", int(self.element))
        if not self.weight > 0:
            raise ValueError("sensor weight must be positive")
        if not self.sigma > 0:
            raise ValueError("sensor sigma must be positive")

    @classmethod
    def displacement(cls, x, weight=1.0, sigma=1.0):
        return cls(DISPLACEMENT, x=x, weight=weight, sigma=sigma)

    @classmethod
    def strain(cls, element, weight=1.0, sigma=1.0):
        return cls(STRAIN, element=element, weight=weight, sigma=sigma)

    def moved(self, x) -> "SensorSpec":
        return SensorSpec(self.kind, x=x, weight=self.weight, sigma=self.sigma)

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == DISPLACEMENT:
            out["x"] = self.x
        else:
            out["element"] = self.element
        out["weight"] = self.weight
        out["sigma"] = self.sigma
        return out

    @classmethod
    def from_json(cls, d: dict, default_sigma: float = 1.0) -> "SensorSpec":
        return cls(
            d["kind"],
            x=d.get("x"),
            element=d.get("element"),
            weight=d.get("weight", 1.0),
            sigma=d.get("sigma", default_sigma),
        )


@dataclass(frozen=True)
class SensorConfig:
    """Sensor lists, one per load case."""

    cases: tuple

    def __post_init__(self):
        cases = tuple(tuple(c) for c in self.cases)
        if not cases or sum(len(c) for c in cases) == 0:
            raise EmptyConfig("sensor configuration has no sensors")
        object.__setattr__(self, "cases", cases)

    @classmethod
    def broadcast(cls, sensors: Sequence[SensorSpec], n_cases: int = 1) -> "SensorConfig":
        return cls(tuple(tuple(sensors) for _ in range(n_cases)))

    @property
    def n_cases(self) -> int:
        return len(self.cases)

    @property
    def counts(self) -> list:
        return [len(c) for c in self.cases]

    @property
    def n_measurements(self) -> int:
        return sum(self.counts)

    def sigmas(self) -> np.ndarray:
        return np.array([s.sigma for case in self.cases for s in case])

    def with_sensor(self, case: int, index: int, spec: SensorSpec) -> "SensorConfig":
        cases = [list(c) for c in self.cases]
        cases[case][index] = spec
        return SensorConfig(cases)

    def validate(self, mesh: Mesh1D) -> None:
        for case in self.cases:
            for s in case:
                _check_location(s, mesh)


@dataclass(frozen=True, eq=False)
class MeasurementOperator:
    """m_i x n_free matrix; ``sensors[r]`` produced row r."""

    matrix: np.ndarray
    sensors: tuple

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def shape(self):
        return self.matrix.shape


def _check_location(s: SensorSpec, mesh: Mesh1D) -> None:
    if s.kind == DISPLACEMENT:
        x0, x1 = mesh.node_coords[0], mesh.node_coords[-1]
        if not (x0 <= s.x <= x1):
            raise LocationOutOfDomain(f"sensor at x={s.x} outside [{x0}, {x1}]")
    elif not (1 <= s.element <= mesh.n_elements):
        raise LocationOutOfDomain(f"strain sensor element {s.element} outside 1..{mesh.n_elements}")


def locate(x: float, mesh: Mesh1D) -> tuple:
    """Return (element e, local coordinate xi in [0, 1]) for coordinate x.

    Points on an interior node are assigned to the element on their right; the
    last node belongs to the last element.
    """
    coords = mesh.node_coords
    if not (coords[0] <= x <= coords[-1]):
        raise LocationOutOfDomain(f"x={x} outside [{coords[0]}, {coords[-1]}]")
    e = int(np.searchsorted(coords, x, side="right")) - 1
    e = min(max(e, 0), mesh.n_elements - 1)
    xi = (x - coords[e]) / (coords[e + 1] - coords[e])
    return e, float(xi)


def on_node(x: float, mesh: Mesh1D) -> bool:
    e, xi = locate(x, mesh)
    return xi <= NODE_TOL or xi >= 1 - NODE_TOL


def sensor_row(s: SensorSpec, mesh: Mesh1D, weighted: bool = True) -> np.ndarray:
    """Full nodal row (length n_nodes) of a single sensor."""
    _check_location(s, mesh)
    row = np.zeros(mesh.n_nodes)
    if s.kind == DISPLACEMENT:
        e, xi = locate(s.x, mesh)
        row[e] = 1.0 - xi
        row[e + 1] = xi
    else:
        e = s.element - 1
        ell = mesh.element_lengths[e]
        row[e] = -1.0 / ell
        row[e + 1] = 1.0 / ell
    return row * s.weight if weighted else row


def build_measurement_operator(config: SensorConfig, mesh: Mesh1D, load_case: int = 0) -> MeasurementOperator:
    """M_i(S): rows over the free dofs; fixed-node columns are dropped (their value is zero)."""
    sensors = config.cases[load_case]
    if not sensors:
        return MeasurementOperator(np.zeros((0, mesh.n_free)), ())
    rows = np.array([sensor_row(s, mesh) for s in sensors])
    return MeasurementOperator(rows[:, mesh.free_dofs], tuple(sensors))


def measurement_operators(config: SensorConfig, mesh: Mesh1D) -> list:
    return [build_measurement_operator(config, mesh, i) for i in range(config.n_cases)]


@dataclass(frozen=True)
class DesignParam:
    """A scalar design variable: the position ('x') or weight of one sensor."""

    case: int
    index: int
    kind: str = "x"

    def __post_init__(self):
        if self.kind not in ("x", "weight"):
            raise ValueError(f"unknown design parameter kind {self.kind!r}")


def position_params(config: SensorConfig) -> list:
    """All displacement-sensor coordinates of a configuration as design parameters."""
    return [
        DesignParam(i, r, "x")
        for i, case in enumerate(config.cases)
        for r, s in enumerate(case)
        if s.kind == DISPLACEMENT
    ]


def measurement_position_derivative(config: SensorConfig, mesh: Mesh1D, theta: DesignParam) -> list:
    """dM_i/dtheta for every load case i (zero matrices where theta does not act).

    Position derivatives need the sensor strictly inside an element: on a node
    the shape-function gradient jumps. Strain sensors have no continuous
    position and are rejected too.
    """
    try:
        s = config.cases[theta.case][theta.index]
    except IndexError:
        raise IndexError(f"no sensor {theta.index} in load case {theta.case}") from None
    out = [np.zeros((len(c), mesh.n_free)) for c in config.cases]
    row = np.zeros(mesh.n_nodes)
    if theta.kind == "weight":
        row = sensor_row(s, mesh, weighted=False)
    else:
        if s.kind != DISPLACEMENT:
            raise NotDifferentiable("strain sensor location is discrete (element membership)")
        _check_location(s, mesh)
        if on_node(s.x, mesh):
            raise NotDifferentiable(f"sensor at x={s.x} sits on a node")
        e, _ = locate(s.x, mesh)
        ell = mesh.element_lengths[e]
        row[e] = -s.weight / ell
        row[e + 1] = s.weight / ell
    out[theta.case][theta.index] = row[mesh.free_dofs]
    return out
