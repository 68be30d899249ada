import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import chord, scaled_identity
from nullrigidity.errors import LeftDomainWarning
from nullrigidity.integrator import IntegratorControls, grid_times, integrate_null_geodesic, trace_rays
from nullrigidity.length import length_at_tau, lengths_of, simpson, simpson_error, timespace_length
from nullrigidity.metric import GeneralBlock
from nullrigidity.shooting import FanSpec, make_fan, make_initial_data


@settings(max_examples=100, deadline=None)
@given(T=st.floats(0.01, 5.0), h=st.sampled_from([1e-3, 0.01, 0.1]),
       c=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_simpson_exact_for_cubics(T, h, c):
    t = grid_times(T, h)
    head = t.size - 3
    f = c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3
    exact = c[0] * T + c[1] * T**2 / 2 + c[2] * T**3 / 3 + c[3] * T**4 / 4
    assert abs(simpson(t, f, head) - exact) <= 1e-12 * (1 + abs(exact) + sum(map(abs, c)) * T**4)


def test_simpson_error_estimate_tracks_error():
    t = grid_times(2.0, 0.05)
    head = t.size - 3
    f = np.exp(3 * t)
    err = abs(simpson(t, f, head) - (math.exp(6.0) - 1) / 3)
    est = simpson_error(t, f, head)
    assert 0.1 < est / err < 10


def test_diameter_length(mink, disk, diameter, controls):
    rec = timespace_length(mink, integrate_null_geodesic(mink, diameter, disk, controls))
    assert abs(rec.L - 2 * math.sqrt(2)) <= 1e-8
    assert not rec.frozen_T
    assert rec.quadrature_error_estimate < 1e-12


def test_time_row_enters_length(disk, controls):
    # dx0/dt = q00 xi0 + q0.xi; with q0 = (0.2, 0) and xi = (-1, 0) the time rate drops
    q = GeneralBlock(1.0, [0.2, 0.0], -np.eye(2))
    init = make_initial_data(q, [-1.0, 0.0], [-1.0, 0.0])
    tr = integrate_null_geodesic(q, init, disk, controls)
    rate = init.eta0 - 0.2
    assert abs(timespace_length(q, tr).L - 2 * math.sqrt(1 + rate**2)) < 1e-8


@pytest.mark.parametrize("tau", [0.0, 0.5, 1.0])
def test_length_at_tau_closed_form(mink, diameter, tau):
    # tau = 1 gives 2 sqrt(1.81) = 2.6907248..., tau = 0.5 gives 2 sqrt(1 + 0.95^2) = 2.7586772...
    eps = 0.1
    rec = length_at_tau(mink, scaled_identity(eps), tau, diameter, 2.0, controls=IntegratorControls(step=1e-3))
    assert rec.frozen_T and rec.T_used == 2.0
    assert abs(rec.L - 2 * math.sqrt(1 + (1 - eps * tau) ** 2)) < 1e-10


def test_length_at_tau_warns_when_leaving(mink, disk, diameter):
    faster = scaled_identity(-0.2)
    with pytest.warns(LeftDomainWarning):
        rec = length_at_tau(mink, faster, 1.0, diameter, 2.0, domain=disk)
    assert rec.left_domain


def test_bump_length_self_convergence(bump, disk):
    init = chord(bump, [1.0, 0.0], [-1.0, 0.3])
    L = [timespace_length(bump, integrate_null_geodesic(bump, init, disk, IntegratorControls(step=h))).L
         for h in (1e-3, 5e-4)]
    assert abs(L[0] - L[1]) <= 1e-8 * L[1]


def test_lengths_of_batch(bump, disk, controls):
    fan = make_fan(disk, bump, FanSpec([-1.0, 0.0], 0.5, 3))
    trajs = trace_rays(bump, fan, disk, controls)
    batch = lengths_of(bump, trajs)
    assert [r.L for r in batch] == [timespace_length(bump, t).L for t in trajs]
    # the bump speeds the ray up, so its length exceeds the straight-chord value
    init = chord(bump, [-1.0, 0.0], [1.0, 0.0])
    assert timespace_length(bump, integrate_null_geodesic(bump, init, disk, controls)).L > 0
