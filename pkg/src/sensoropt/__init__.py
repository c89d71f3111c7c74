"""Fisher-information sensor placement for finite-element bar models."""

from .bar1d import BarSpec
from .design import criterion_value, d_objective_and_gradient, fisher_matrix, solve_with_F
from .model import LoadCase, Mesh1D, ParameterVector, StructuralModel, bar_model
from .placement import CandidatePool, SubsetScorer, continuous_descent, exhaustive_select, greedy_select
from .sensitivity import JacobianOperator, NoiseModel, assemble_jacobian
from .sensors import SensorConfig, SensorSpec

__version__ = "0.1.0"

__all__ = [
    "BarSpec", "CandidatePool", "JacobianOperator", "LoadCase", "Mesh1D", "NoiseModel",
    "ParameterVector", "SensorConfig", "SensorSpec", "StructuralModel", "SubsetScorer",
    "assemble_jacobian", "bar_model", "continuous_descent", "criterion_value",
    "d_objective_and_gradient", "exhaustive_select", "fisher_matrix", "greedy_select", "solve_with_F",
]
