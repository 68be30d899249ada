"""Time-space length of traced null geodesics.

The length is the Euclidean arc length of the curve ``(x0(t), x(t))`` over
``[0, T]``.  The integrand comes from the vector field at the grid nodes, never
from differencing stored positions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import LeftDomainWarning
from .flow import spatial_velocity, time_rate
from .integrator import IntegratorControls, Trajectory, trace_interval
from .metric import Homotopy, Metric


def _uniform_simpson(f, h):
    w = np.ones(f.shape[0])
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return h / 3.0 * np.tensordot(w, f, axes=(0, 0))


def simpson(t, f, head):
    """Composite Simpson on a grid from :func:`~nullrigidity.integrator.grid_times`.

    ``f`` has the node axis first.  Nodes ``0..head`` are uniform (``head``
    even) and the last three nodes form one Simpson panel over the tail.
    """
    f = np.asarray(f, dtype=float)
    total = _uniform_simpson(f[: head + 1], t[1] - t[0]) if head > 0 else 0.0
    width = t[-1] - t[head]
    return total + width / 6.0 * (f[head] + 4.0 * f[head + 1] + f[head + 2])


def simpson_error(t, f, head):
    """Richardson estimate |S_h - S_2h| / 15 over the uniform part of the grid."""
    if head < 4:
        return 0.0
    f = np.asarray(f, dtype=float)
    h = t[1] - t[0]
    end = head - (head % 4)
    fine = _uniform_simpson(f[: end + 1], h)
    coarse = _uniform_simpson(f[: end + 1 : 2], 2.0 * h)
    return float(np.max(np.abs(fine - coarse)) / 15.0)


@dataclass
class LengthRecord:
    L: float
    T_used: float
    frozen_T: bool
    quadrature_error_estimate: float
    left_domain: bool = False


def speed_integrand(metric: Metric, trajectory: Trajectory):
    b = metric.blocks(trajectory.x)
    v = spatial_velocity(b, trajectory.xi0, trajectory.xi, trajectory.dynamics)
    r0 = time_rate(b, trajectory.xi0, trajectory.xi)
    return np.sqrt(r0**2 + np.einsum("mi,mi->m", v, v))


def timespace_length(metric: Metric, trajectory: Trajectory) -> LengthRecord:
    f = speed_integrand(metric, trajectory)
    t, head = trajectory.t, trajectory.head
    return LengthRecord(
        L=float(simpson(t, f, head)),
        T_used=float(t[-1]),
        frozen_T=trajectory.status == "frozen",
        quadrature_error_estimate=simpson_error(t, f, head),
        left_domain=trajectory.left_domain,
    )


def lengths_of(metric: Metric, trajectories):
    """Lengths of a batch of trajectories traced in ``metric``."""
    return [timespace_length(metric.select(r), tr) for r, tr in enumerate(trajectories)]


def length_at_tau(q1: Metric, q2: Metric, tau: float, init, T_frozen: float, domain=None,
                  controls: IntegratorControls = None) -> LengthRecord:
    """Length in the homotopy metric over the fixed interval ``[0, T_frozen]``.

    ``T_frozen`` is the exit time in ``q1``; the ray is not stopped at the
    boundary, and an excursion outside the domain is only flagged.
    """
    metric = Homotopy(q1, q2, tau)
    (traj,) = trace_interval(metric, [init], T_frozen, controls, domain)
    rec = timespace_length(metric, traj)
    if rec.left_domain:
        warnings.warn(f"ray leaves the domain before T={T_frozen:.6f} in the tau={tau} metric",
                      LeftDomainWarning, stacklevel=2)
    return rec
