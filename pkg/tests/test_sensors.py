import numpy as np
import pytest
from hypothesis import given, strategies as st

from sensoropt.errors import EmptyConfig, LocationOutOfDomain, NotDifferentiable
from sensoropt.model import Mesh1D
from sensoropt.sensors import (
    DesignParam,
    SensorConfig,
    SensorSpec,
    build_measurement_operator,
    locate,
    measurement_position_derivative,
    sensor_row,
)

MESH = Mesh1D.uniform(10)


def op(*sensors, mesh=MESH):
    return build_measurement_operator(SensorConfig.broadcast(sensors), mesh).matrix


def test_nodal_sensor_is_unit_row():
    M = op(SensorSpec.displacement(4.0))
    expect = np.zeros(10)
    expect[3] = 1.0  # node 4 -> free dof 3
    np.testing.assert_array_equal(M[0], expect)


def test_midpoint_sensor():
    row = sensor_row(SensorSpec.displacement(4.5), MESH)
    assert row[4] == 0.5 and row[5] == 0.5 and np.count_nonzero(row) == 2


def test_strain_rows():
    row = op(SensorSpec.strain(4))[0]
    assert row[2] == -1.0 and row[3] == 1.0 and np.count_nonzero(row) == 2
    row1 = op(SensorSpec.strain(1))[0]
    assert row1[0] == 1.0 and np.count_nonzero(row1) == 1  # node 0 column dropped


def test_weights_scale_rows():
    np.testing.assert_allclose(op(SensorSpec.displacement(2.25, weight=3.0)), 3.0 * op(SensorSpec.displacement(2.25)))


def test_location_errors():
    with pytest.raises(LocationOutOfDomain):
        op(SensorSpec.displacement(10.5))
    with pytest.raises(LocationOutOfDomain):
        op(SensorSpec.strain(11))
    with pytest.raises(EmptyConfig):
        SensorConfig.broadcast([])


def test_spec_validation():
    with pytest.raises(ValueError):
        SensorSpec("acceleration", x=1.0)
    with pytest.raises(ValueError):
        SensorSpec.displacement(1.0, weight=0.0)
    with pytest.raises(ValueError):
        SensorSpec.displacement(1.0, sigma=-1)
    with pytest.raises(ValueError):
        SensorSpec("strain", x=1.0)


def test_json_roundtrip():
    for s in (SensorSpec.displacement(2.5, 2.0, 0.1), SensorSpec.strain(3)):
        assert SensorSpec.from_json(s.to_json()) == s


def test_locate_nodes():
    assert locate(0.0, MESH) == (0, 0.0)
    assert locate(10.0, MESH) == (9, 1.0)
    assert locate(3.0, MESH) == (3, 0.0)


@given(st.floats(0.0, 10.0), st.floats(0.1, 5.0))
def test_partition_of_unity(x, w):
    row = sensor_row(SensorSpec.displacement(x, weight=w), MESH)
    assert abs(row.sum() - w) <= 1e-12 * w


@given(st.integers(1, 10), st.floats(-5, 5))
def test_strain_rows_annihilate_translation(r, c):
    row = sensor_row(SensorSpec.strain(r), MESH)
    assert abs(row @ np.full(11, c)) <= 1e-12


def test_position_derivative_row():
    cfg = SensorConfig.broadcast([SensorSpec.displacement(4.5)])
    dM = measurement_position_derivative(cfg, MESH, DesignParam(0, 0))[0]
    expect = np.zeros(10)
    expect[3], expect[4] = -1.0, 1.0
    np.testing.assert_array_equal(dM[0], expect)
    cfg2 = SensorConfig.broadcast([SensorSpec.displacement(4.5, weight=2.0)])
    np.testing.assert_array_equal(measurement_position_derivative(cfg2, MESH, DesignParam(0, 0))[0], 2 * dM)


def test_position_derivative_matches_fd():
    rng = np.random.default_rng(0)
    coords = np.cumsum(np.r_[0.0, rng.uniform(0.5, 1.5, 8)])
    mesh = Mesh1D(coords)
    for _ in range(20):
        e = rng.integers(0, 8)
        x = coords[e] + rng.uniform(0.1, 0.9) * (coords[e + 1] - coords[e])
        s = SensorSpec.displacement(x, weight=rng.uniform(0.5, 2))
        cfg = SensorConfig.broadcast([SensorSpec.strain(2), s])
        h = 1e-5
        fd = (op(SensorSpec.strain(2), s.moved(x + h), mesh=mesh) - op(SensorSpec.strain(2), s.moved(x - h), mesh=mesh)) / (2 * h)
        an = measurement_position_derivative(cfg, mesh, DesignParam(0, 1))[0]
        assert np.linalg.norm(an - fd) <= 1e-6 * np.linalg.norm(an)


def test_weight_derivative_is_unweighted_row():
    cfg = SensorConfig.broadcast([SensorSpec.displacement(4.25, weight=3.0)])
    dM = measurement_position_derivative(cfg, MESH, DesignParam(0, 0, "weight"))[0]
    np.testing.assert_allclose(dM, op(SensorSpec.displacement(4.25)))


def test_not_differentiable():
    cfg = SensorConfig.broadcast([SensorSpec.displacement(4.0), SensorSpec.strain(2)])
    with pytest.raises(NotDifferentiable):
        measurement_position_derivative(cfg, MESH, DesignParam(0, 0))
    with pytest.raises(NotDifferentiable):
        measurement_position_derivative(cfg, MESH, DesignParam(0, 1))


def test_multi_case_operators():
    cfg = SensorConfig(((SensorSpec.displacement(1.0),), (SensorSpec.strain(2), SensorSpec.displacement(3.5))))
    assert cfg.counts == [1, 2] and cfg.n_measurements == 3
    assert build_measurement_operator(cfg, MESH, 1).shape == (2, 10)
    dM = measurement_position_derivative(cfg, MESH, DesignParam(1, 1))
    assert not np.any(dM[0]) and np.any(dM[1][1]) and not np.any(dM[1][0])
