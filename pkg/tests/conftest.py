import numpy as np
import pytest

from sensoropt.model import LoadCase, Mesh1D, ParameterVector, StructuralModel, bar_model
from sensoropt.sensors import SensorConfig, SensorSpec


@pytest.fixture
def bar():
    return bar_model(10)


@pytest.fixture
def q_undamaged():
    return ParameterVector(np.ones(10))


@pytest.fixture
def nodal_config():
    return SensorConfig.broadcast([SensorSpec.displacement(j) for j in range(1, 11)])


def mixed_problem(seed=0):
    """Bar with two load cases, a thermal basis vector and alpha, E, f_dT all active."""
    rng = np.random.default_rng(seed)
    mesh = Mesh1D.uniform(10, 0.7, fixed_dofs=(0,), area=2.0)
    f1 = np.zeros(11)
    f1[-1] = 3.0
    f2 = np.zeros(11)
    f2[5] = -1.0
    f2[8] = 2.0
    basis = np.linspace(0.0, 1.0, 11) ** 2
    model = StructuralModel(mesh, (LoadCase(f1, 0), LoadCase(f2, 1)), basis[None, :])
    q0 = ParameterVector(rng.uniform(0.4, 1.0, 10), beta=5.0, f_dT=[0.3], active=("alpha", "beta", "f_dT"))
    sensors = [SensorSpec.displacement(2.35, sigma=0.5), SensorSpec.displacement(7.0 * 0.7, weight=2.0),
               SensorSpec.strain(3, sigma=0.2), SensorSpec.strain(9, weight=0.5)]
    cases = (tuple(sensors), (SensorSpec.displacement(6.65, sigma=0.3), SensorSpec.strain(1)))
    return model, q0, SensorConfig(cases)


@pytest.fixture
def mixed():
    return mixed_problem()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
