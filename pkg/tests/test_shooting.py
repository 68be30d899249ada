import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nullrigidity.domain import DomainSpec
from nullrigidity.errors import EmptyFan, GrazingRayWarning, NoForwardRoot
from nullrigidity.flow import time_rate
from nullrigidity.metric import ConformalBump, GeneralBlock, Minkowski, eval_blocks
from nullrigidity.shooting import (FanSpec, InitialData, aim_covector, fan_base_points, fan_from_config,
                                   make_fan, make_initial_data, null_covector)


def test_minkowski_root():
    assert null_covector(Minkowski(2), [-1.0, 0.0], [-1.0, 0.0]) == 1.0
    assert math.isclose(null_covector(Minkowski(2), [0.0, 0.0], [3.0, 4.0]), 5.0)


@settings(max_examples=60, deadline=None)
@given(
    q0=st.lists(st.floats(-0.4, 0.4), min_size=2, max_size=2),
    eta=st.lists(st.floats(-2, 2), min_size=2, max_size=2).filter(lambda v: np.hypot(*v) > 1e-3),
    q00=st.floats(0.5, 2.0),
)
def test_root_is_null_and_forward(q0, eta, q00):
    q = GeneralBlock(q00, q0, [[-1.0, 0.2], [0.2, -0.9]])
    eta0 = null_covector(q, [0.0, 0.0], eta)
    init = InitialData([0.0, 0.0], eta, eta0)
    scale = 1 + float(np.dot(eta, eta))
    assert abs(init.null_residual(q)) <= 1e-13 * scale
    assert time_rate(eval_blocks(q, [0.0, 0.0]), eta0, np.asarray(eta)) > 0


def test_no_forward_root():
    # q' with a positive direction: eta along it makes the quadratic positive
    q = GeneralBlock(1.0, [0.0, 0.0], [[0.5, 0.0], [0.0, -1.0]])
    with pytest.raises(NoForwardRoot):
        null_covector(q, [0.0, 0.0], [1.0, 0.0])


def test_zero_covector_rejected():
    with pytest.raises(ValueError):
        null_covector(Minkowski(2), [0.0, 0.0], [0.0, 0.0])


def test_aim_covector_gives_velocity_direction():
    q = ConformalBump(0.5, [0.3, 0.0], 0.5)
    y = np.array([-1.0, 0.0])
    eta = aim_covector(q, y, [1.0, 0.0])
    v = eval_blocks(q, y).qprime @ eta
    assert v[0] > 0 and abs(v[1]) < 1e-15


def test_fan_base_points_on_boundary_and_equispaced():
    disk = DomainSpec.unit_ball(2)
    pts = fan_base_points(disk, [-1.0, 0.0], 0.3, 7)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-15)
    ang = np.unwrap(np.arctan2(pts[:, 1], pts[:, 0]))
    np.testing.assert_allclose(np.diff(ang), 0.1, atol=1e-12)
    np.testing.assert_allclose(pts[3], [-1.0, 0.0], atol=1e-15)


def test_fan_in_three_dimensions():
    ball = DomainSpec.unit_ball(3)
    rays = make_fan(ball, Minkowski(3), FanSpec([0.0, 0.0, -1.0], 0.2, 5))
    assert len(rays) == 5
    for r in rays:
        assert abs(np.linalg.norm(r.y) - 1.0) < 1e-12


def test_inward_chords_point_at_center():
    disk = DomainSpec.unit_ball(2)
    for init in make_fan(disk, Minkowski(2), FanSpec([-1.0, 0.0], 0.5, 5)):
        v = -init.eta  # q' = -I
        np.testing.assert_allclose(v / np.linalg.norm(v), -init.y, atol=1e-14)
        assert init.eta0 > 0


def test_fixed_eta_excludes_outward_rays():
    disk = DomainSpec.unit_ball(2)
    # a tangential covector: the center ray grazes, half of the rest point outward
    fan = FanSpec([-1.0, 0.0], 0.4, 5, "fixed_eta", eta=[0.0, -1.0])
    with pytest.warns(GrazingRayWarning):
        res = make_fan(disk, Minkowski(2), fan, return_skipped=True)
    reasons = dict(res.skipped)
    assert reasons[2] == "grazing at t=0"
    assert len(res.rays) == 2


def test_empty_fan():
    disk = DomainSpec.unit_ball(2)
    fan = FanSpec([-1.0, 0.0], 0.0, 1, "fixed_eta", eta=[1.0, 0.0])  # velocity outward
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(EmptyFan):
            make_fan(disk, Minkowski(2), fan)


def test_fan_anchor_must_be_on_boundary():
    with pytest.raises(ValueError):
        make_fan(DomainSpec.unit_ball(2), Minkowski(2), FanSpec([0.5, 0.0], 0.1, 3))


def test_box_fan():
    box = DomainSpec("box", (0.0, 0.0), half_widths=(1.0, 0.5))
    rays = make_fan(box, Minkowski(2), FanSpec([-1.0, 0.0], 0.2, 3))
    np.testing.assert_allclose([r.y[1] for r in rays], [-0.2, 0.0, 0.2], atol=1e-15)


def test_fan_from_config_angle():
    disk = DomainSpec.unit_ball(2)
    fan = fan_from_config({"y0_angle": math.pi, "epsilon": 0.1, "count": 3}, disk)
    np.testing.assert_allclose(fan.y0, [-1.0, 0.0], atol=1e-15)


def test_initial_data_helpers():
    init = make_initial_data(Minkowski(2), [-1.0, 0.0], [-1.0, 0.0])
    assert init.null_residual(Minkowski(2)) == 0.0
    assert init.x0_start == 0.0


def test_boundary_value():
    disk = DomainSpec.unit_ball(2)
    np.testing.assert_array_equal(disk.boundary_value(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])),
                                  [-1.0, 0.0, 1.0])


def test_reference_roots():
    assert math.isclose(null_covector(ConformalBump(0.1, [0.0, 0.0], 0.5), [0.0, 0.0], [1.0, 0.0]), 1.1,
                        rel_tol=1e-15)
    q = GeneralBlock(1.0, [0.2, 0.0], -np.eye(2))
    eta0 = null_covector(q, [0.0, 0.0], [1.0, 0.0])
    assert math.isclose(eta0, -0.2 + math.sqrt(1.04), rel_tol=1e-15)
    assert abs(InitialData(np.zeros(2), np.array([1.0, 0.0]), eta0).null_residual(q)) <= 1e-12


def test_degenerate_fan_is_the_anchor():
    (ray,) = make_fan(DomainSpec.unit_ball(2), Minkowski(2), FanSpec([1.0, 0.0], 0.0, 1))
    np.testing.assert_array_equal(ray.y, [1.0, 0.0])
