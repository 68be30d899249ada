"""First and second variations along the metric homotopy ``q1 + tau*(q2 - q1)``.

The variations ``X = dx/dtau``, ``Xi = dxi/dtau`` (and ``X0 = dx0/dtau``)
satisfy the linearization of the reduced geodesic system::

    d/dt (X, Xi) = Q (X, Xi) + F,      X(0) = Xi(0) = 0,

where ``Q`` is the Jacobian of the vector field and ``F`` its tau-derivative.
Since the homotopy is linear in tau, ``F`` is the vector field built from the
perturbation ``q2 - q1`` alone and ``Q`` is evaluated in the metric ``q_tau``;
at ``tau = 0`` this is exactly ``Q(q1)``.  The variations are integrated jointly
with the baseline ray on its own RK4 grid, which makes them the exact
tau-derivatives of the discrete solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .flow import spatial_velocity, time_rate
from .integrator import PhaseState, Trajectory, integrate_on_grids
from .length import lengths_of, simpson
from .metric import Difference, Homotopy, Metric


@dataclass
class VariationState:
    dx_dtau: np.ndarray
    dxi_dtau: np.ndarray
    dx0_dtau: float = 0.0
    d2x_dtau2: Optional[np.ndarray] = None
    d2xi_dtau2: Optional[np.ndarray] = None


@dataclass(eq=False)
class VariationTrajectory:
    baseline: Trajectory
    tau: float
    t: np.ndarray
    dx_dtau: np.ndarray
    dxi_dtau: np.ndarray
    dx0_dtau: np.ndarray
    d2x_dtau2: Optional[np.ndarray] = None
    d2xi_dtau2: Optional[np.ndarray] = None
    # baseline path recomputed alongside the variations (same grid)
    x: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None

    def state(self, i) -> VariationState:
        return VariationState(
            self.dx_dtau[i], self.dxi_dtau[i], float(self.dx0_dtau[i]),
            None if self.d2x_dtau2 is None else self.d2x_dtau2[i],
            None if self.d2xi_dtau2 is None else self.d2xi_dtau2[i],
        )


@dataclass
class LengthVariation:
    dL_dtau: float
    l_value: float
    G2: float
    L1: float = float("nan")
    L2: float = float("nan")


def q_matrix(metric: Metric, x, xi):
    """The 2n x 2n Jacobian of the reduced vector field at points ``x`` with covectors ``xi``."""
    x = np.atleast_2d(x)
    xi = np.atleast_2d(xi)
    n = metric.dim
    b = metric.blocks(x)
    d = metric.derivatives(x, 2)
    Q = np.empty((x.shape[0], 2 * n, 2 * n))
    Q[:, :n, :n] = np.einsum("mijk,mj->mik", d.d1, xi)
    Q[:, :n, n:] = b.qprime
    Q[:, n:, :n] = -0.5 * np.einsum("mijkl,mi,mj->mkl", d.d2, xi, xi)
    Q[:, n:, n:] = -np.einsum("mijk,mi->mkj", d.d1, xi)
    return Q


def _layout(n, second):
    """Slices of the packed joint state."""
    sl = {"x": slice(0, n), "xi": slice(n, 2 * n), "x0": 2 * n,
          "X": slice(2 * n + 1, 3 * n + 1), "Xi": slice(3 * n + 1, 4 * n + 1), "X0": 4 * n + 1}
    size = 4 * n + 2
    if second:
        sl["X2"] = slice(size, size + n)
        sl["Xi2"] = slice(size + n, size + 2 * n)
        size += 2 * n
    return sl, size


def joint_rhs(metric_tau: Metric, delta: Metric, z, xi0, second=False):
    """Vector field of (baseline, first variation[, second variation])."""
    n = metric_tau.dim
    sl, _ = _layout(n, second)
    x, xi = z[:, sl["x"]], z[:, sl["xi"]]
    X, Xi = z[:, sl["X"]], z[:, sl["Xi"]]
    b = metric_tau.blocks(x)
    d = metric_tau.derivatives(x, 3 if second else 2)
    e = delta.blocks(x)
    ed = delta.derivatives(x, 2 if second else 1)
    P, D1, D2 = b.qprime, d.d1, d.d2
    ein = np.einsum

    out = np.empty_like(z)
    out[:, sl["x"]] = ein("mij,mj->mi", P, xi)
    out[:, sl["xi"]] = -0.5 * ein("mijk,mi,mj->mk", D1, xi, xi)
    out[:, sl["x0"]] = time_rate(b, xi0, xi)

    out[:, sl["X"]] = (ein("mijk,mj,mk->mi", D1, xi, X) + ein("mij,mj->mi", P, Xi)
                       + ein("mij,mj->mi", e.qprime, xi))
    out[:, sl["Xi"]] = (-0.5 * ein("mijkl,mi,mj,ml->mk", D2, xi, xi, X)
                        - ein("mijk,mi,mj->mk", D1, xi, Xi)
                        - 0.5 * ein("mijk,mi,mj->mk", ed.d1, xi, xi))
    out[:, sl["X0"]] = (e.q00 * xi0 + ein("mj,mj->m", e.q0, xi)
                        + ein("mk,mk->m", d.dq00, X) * xi0
                        + ein("mjk,mk,mj->m", d.dq0, X, xi)
                        + ein("mj,mj->m", b.q0, Xi))
    if second:
        X2, Xi2 = z[:, sl["X2"]], z[:, sl["Xi2"]]
        out[:, sl["X2"]] = (ein("mijk,mj,mk->mi", D1, xi, X2) + ein("mij,mj->mi", P, Xi2)
                            + ein("mijkl,mj,mk,ml->mi", D2, xi, X, X)
                            + 2.0 * ein("mijk,mj,mk->mi", D1, Xi, X)
                            + 2.0 * (ein("mijk,mj,mk->mi", ed.d1, xi, X) + ein("mij,mj->mi", e.qprime, Xi)))
        out[:, sl["Xi2"]] = (-0.5 * ein("mijkl,mi,mj,ml->mk", D2, xi, xi, X2)
                             - ein("mijk,mi,mj->mk", D1, xi, Xi2)
                             - 0.5 * ein("mijklp,mi,mj,ml,mp->mk", d.d3, xi, xi, X, X)
                             - 2.0 * ein("mijkl,mi,mj,ml->mk", D2, xi, Xi, X)
                             - ein("mijk,mi,mj->mk", D1, Xi, Xi)
                             - ein("mijkl,mi,mj,ml->mk", ed.d2, xi, xi, X)
                             - 2.0 * ein("mijk,mi,mj->mk", ed.d1, xi, Xi))
    return out


def variational_rhs(q1: Metric, q2: Metric, tau: float, state: PhaseState,
                    vstate: VariationState) -> VariationState:
    """Time derivative of the variation state at one baseline point."""
    n = q1.dim
    second = vstate.d2x_dtau2 is not None
    sl, size = _layout(n, second)
    z = np.zeros((1, size))
    z[0, sl["x"]], z[0, sl["xi"]], z[0, sl["x0"]] = state.x, state.xi, state.x0
    z[0, sl["X"]], z[0, sl["Xi"]], z[0, sl["X0"]] = vstate.dx_dtau, vstate.dxi_dtau, vstate.dx0_dtau
    if second:
        z[0, sl["X2"]], z[0, sl["Xi2"]] = vstate.d2x_dtau2, vstate.d2xi_dtau2
    dz = joint_rhs(Homotopy(q1, q2, tau), Difference(q2, q1), z, np.array([state.xi0]), second)[0]
    return VariationState(dz[sl["X"]], dz[sl["Xi"]], float(dz[sl["X0"]]),
                          dz[sl["X2"]] if second else None, dz[sl["Xi2"]] if second else None)


def _check_reduced(baselines):
    for b in baselines:
        if b.dynamics != "reduced":
            raise ValueError("variations are defined for the reduced dynamics only")


def variations(q1: Metric, q2: Metric, tau, baselines: Sequence[Trajectory], second=False,
               delta: Metric = None):
    """Joint integration of the variation systems for a batch of baselines.

    ``tau`` is a scalar or one value per baseline.  ``delta`` overrides the
    perturbation direction (default ``q2 - q1``).
    """
    baselines = list(baselines)
    _check_reduced(baselines)
    n = q1.dim
    m = len(baselines)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (m,))
    metric_tau = Homotopy(q1, q2, tau)
    delta = delta if delta is not None else Difference(q2, q1)
    sl, size = _layout(n, second)
    z0 = np.zeros((m, size))
    for r, b in enumerate(baselines):
        z0[r, sl["x"]], z0[r, sl["xi"]], z0[r, sl["x0"]] = b.init.y, b.init.eta, b.init.x0_start
    xi0 = np.array([b.init.eta0 for b in baselines])
    h = baselines[0].step
    heads = np.array([b.head for b in baselines])
    tails = np.array([b.t[-1] - b.head * h for b in baselines])
    S = integrate_on_grids(lambda z: joint_rhs(metric_tau, delta, z, xi0, second), z0, h, heads, tails)
    out = []
    for r, b in enumerate(baselines):
        zr = S[: heads[r] + 3, r]
        out.append(VariationTrajectory(
            baseline=b, tau=float(tau[r]), t=b.t,
            dx_dtau=zr[:, sl["X"]], dxi_dtau=zr[:, sl["Xi"]], dx0_dtau=zr[:, sl["X0"]],
            d2x_dtau2=zr[:, sl["X2"]] if second else None,
            d2xi_dtau2=zr[:, sl["Xi2"]] if second else None,
            x=zr[:, sl["x"]], xi=zr[:, sl["xi"]],
        ))
    return out, (metric_tau, delta, S)


def integrate_first_variation(q1: Metric, q2: Metric, tau: float, baseline: Trajectory):
    return variations(q1, q2, tau, [baseline])[0][0]


def integrate_second_variation(q1: Metric, q2: Metric, tau: float, baseline: Trajectory,
                               first: VariationTrajectory = None):
    """Second variation; the first variation is recomputed jointly on the same grid."""
    vt = variations(q1, q2, tau, [baseline], second=True)[0][0]
    if first is not None and first.t.shape != vt.t.shape:
        raise ValueError("first variation lives on a different grid")
    return vt


def _length_derivative(metric_r, delta, vt: VariationTrajectory):
    """dL/dtau at the variation's tau by Simpson on the node integrand."""
    n = metric_r.dim
    sl, size = _layout(n, False)
    m = vt.t.size
    z = np.empty((m, size))
    z[:, sl["x"]], z[:, sl["xi"]], z[:, sl["x0"]] = vt.x, vt.xi, 0.0
    z[:, sl["X"]], z[:, sl["Xi"]], z[:, sl["X0"]] = vt.dx_dtau, vt.dxi_dtau, vt.dx0_dtau
    xi0 = np.full(m, vt.baseline.xi0)
    dz = joint_rhs(metric_r, delta, z, xi0)
    v, r0 = dz[:, sl["x"]], dz[:, sl["x0"]]
    dv, dr0 = dz[:, sl["X"]], dz[:, sl["X0"]]
    speed = np.sqrt(r0**2 + np.einsum("mi,mi->m", v, v))
    integrand = (np.einsum("mi,mi->m", v, dv) + r0 * dr0) / speed
    return float(simpson(vt.t, integrand, vt.baseline.head))


def linear_parts(q1: Metric, q2: Metric, baselines: Sequence[Trajectory], firsts=None):
    """dL/dtau at tau = 0 along each baseline (the linear part of ``L(q2) - L(q1)``)."""
    baselines = list(baselines)
    if firsts is None:
        firsts, _ = variations(q1, q2, 0.0, baselines)
    delta = Difference(q2, q1)
    return np.array([_length_derivative(Homotopy(q1, q2, vt.tau), delta, vt) for vt in firsts])


def length_variations(q1: Metric, q2: Metric, baselines: Sequence[Trajectory], firsts=None,
                      L1=None, L2=None, controls=None):
    """Linear part and Taylor remainder of ``L(q2) - L(q1)`` for each baseline.

    ``L1``/``L2`` may be supplied when already computed (lengths over the
    q1-exit interval in ``q1`` and ``q2``).
    """
    from .integrator import IntegratorControls, trace_interval

    baselines = list(baselines)
    dL = linear_parts(q1, q2, baselines, firsts)
    if L1 is None:
        L1 = [rec.L for rec in lengths_of(q1, baselines)]
    if L2 is None:
        controls = controls or IntegratorControls(step=baselines[0].step)
        inits = [b.init for b in baselines]
        traj2 = trace_interval(q2, inits, [b.t[-1] for b in baselines], controls)
        L2 = [rec.L for rec in lengths_of(q2, traj2)]
    return [LengthVariation(dL_dtau=float(d), l_value=float(d), G2=(L2[r] - L1[r]) - float(d),
                            L1=L1[r], L2=L2[r]) for r, d in enumerate(dL)]


def length_first_variation(q1: Metric, q2: Metric, baseline: Trajectory,
                           first: VariationTrajectory = None) -> LengthVariation:
    firsts = None if first is None else [first]
    return length_variations(q1, q2, [baseline], firsts)[0]
