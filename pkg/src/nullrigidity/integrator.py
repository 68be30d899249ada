"""Null-geodesic integration with exit-time detection.

Rays are integrated in batches with classical RK4 on a fixed step.  Every
returned trajectory lives on the grid produced by :func:`grid_times`: uniform
nodes ``0, h, ..., head*h`` (``head`` even) followed by a tail of two equal
sub-steps ending exactly at the final time.  All quadratures downstream are
composite Simpson on that grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .domain import DomainSpec
from .errors import ForwardViolation, NoExitWarning
from .flow import DYNAMICS, geodesic_rhs, hamiltonian, spatial_velocity, time_rate
from .metric import Metric
from .shooting import GRAZING_TOL, InitialData

# starts with boundary_value below -INSIDE_TOL count as interior
INSIDE_TOL = 1e-9


@dataclass
class IntegratorControls:
    method: str = "rk4_fixed"
    step: float = 1e-3
    rtol: float = 1e-10
    atol: float = 1e-10
    t_max: float = 100.0
    event_tol: float = 1e-10
    dynamics: str = "reduced"
    skip_steps: int = 10

    def __post_init__(self):
        if self.method not in ("rk4_fixed", "rk45_adaptive"):
            raise ValueError(f"unknown integration method '{self.method}'")
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"unknown dynamics '{self.dynamics}'")
        for name in ("step", "t_max", "event_tol", "rtol", "atol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_step(self, step):
        cfg = asdict(self)
        cfg["step"] = step
        return IntegratorControls(**cfg)

    def to_config(self):
        return asdict(self)

    @classmethod
    def from_config(cls, cfg):
        known = {k: cfg[k] for k in cls.__dataclass_fields__ if k in cfg}
        return cls(**known)


@dataclass
class PhaseState:
    x0: float
    x: np.ndarray
    xi0: float
    xi: np.ndarray
    t: float


@dataclass(eq=False)
class Trajectory:
    """Dense record of one ray.

    ``status`` is ``"exited"`` for rays whose exit time was located,
    ``"no_exit"`` for rays still inside at ``t_max`` and ``"frozen"`` for
    rays integrated over a prescribed interval.
    """

    init: InitialData
    t: np.ndarray
    x0: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    xi0: float
    T_exit: float
    exit_point: np.ndarray
    step: float
    head: int
    status: str = "exited"
    exit_grazing: bool = False
    h_drift_max: float = float("nan")
    left_domain: bool = False
    dynamics: str = "reduced"
    dx0_dt: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def exited(self):
        return self.status == "exited"

    @property
    def dim(self):
        return self.x.shape[1]

    def packed(self):
        return np.concatenate([self.x, self.xi, self.x0[:, None]], axis=1)

    def state(self, i) -> PhaseState:
        return PhaseState(float(self.x0[i]), self.x[i], self.xi0, self.xi[i], float(self.t[i]))


# -- grid and stepping ---------------------------------------------------------


def grid_layout(T, h):
    """Number of uniform steps (even) and the tail length in (0, 2h]."""
    K = int(math.floor(T / h))
    if K * h >= T:
        K -= 1
    K = max(K, 0)
    head = K - (K % 2)
    return head, T - head * h


def grid_times(T, h):
    head, tail = grid_layout(T, h)
    return np.concatenate([np.arange(head + 1) * h, [head * h + 0.5 * tail, T]])


def rk4_step(f, z, dt):
    """One classical RK4 step with a per-row step size ``dt`` of shape (m, 1)."""
    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_on_grids(f, z0, h, heads, tails):
    """RK4 along per-row grids; returns states of shape (steps + 1, m, d).

    Row ``r`` takes ``heads[r]`` steps of ``h`` then two steps of
    ``tails[r] / 2`` and is held fixed afterwards, so ``out[: heads[r] + 3, r]``
    are its grid nodes.
    """
    heads = np.asarray(heads, dtype=int)
    tails = np.asarray(tails, dtype=float)
    n_iter = int(heads.max()) + 2
    out = np.empty((n_iter + 1,) + z0.shape, dtype=z0.dtype)
    out[0] = z = z0
    for i in range(n_iter):
        dt = np.where(i < heads, h, np.where(i < heads + 2, 0.5 * tails, 0.0))
        z = rk4_step(f, z, dt[:, None])
        out[i + 1] = z
    return out


def pack_inits(inits: Sequence[InitialData]):
    z0 = np.array([np.concatenate([r.y, r.eta, [r.x0_start]]) for r in inits])
    xi0 = np.array([r.eta0 for r in inits])
    return z0, xi0


def _hermite(za, zb, fa, fb, h, theta):
    t2, t3 = theta * theta, theta**3
    return ((2 * t3 - 3 * t2 + 1) * za + (t3 - 2 * t2 + theta) * h * fa
            + (-2 * t3 + 3 * t2) * zb + (t3 - t2) * h * fb)


def _finish(metric, inits, nodes_list, times_list, T_list, status_list, h, heads, dynamics,
            domain=None):
    """Build Trajectory records and run the per-node diagnostics."""
    n = metric.dim
    out = []
    for r, init in enumerate(inits):
        z = nodes_list[r]
        mr = metric.select(r)
        x, xi, x0 = z[:, :n], z[:, n:2 * n], z[:, 2 * n]
        b = mr.blocks(x)
        H = hamiltonian(b, init.eta0, xi)
        rate0 = time_rate(b, init.eta0, xi)
        traj = Trajectory(
            init=init, t=times_list[r], x0=x0, x=x, xi=xi, xi0=init.eta0,
            T_exit=float(T_list[r]), exit_point=x[-1].copy(), step=h, head=int(heads[r]),
            status=status_list[r], h_drift_max=float(np.max(np.abs(H))),
            dynamics=dynamics, dx0_dt=rate0,
        )
        if domain is not None:
            phi = domain.boundary_value(x[1:-1])
            traj.left_domain = bool(np.any(phi > 1e-9))
            if traj.exited:
                grad = domain.boundary_gradient(x[-1])
                v = spatial_velocity(mr.blocks(x[-1]), init.eta0, xi[-1:], dynamics)[0]
                traj.exit_grazing = bool(
                    abs(grad @ v) < GRAZING_TOL * np.linalg.norm(grad) * np.linalg.norm(v))
        out.append(traj)
    return out


def _check_forward(trajs):
    for i, tr in enumerate(trajs):
        if np.any(tr.dx0_dt <= 0):
            k = int(np.argmax(tr.dx0_dt <= 0))
            raise ForwardViolation(f"ray {i}: dx0/dt = {tr.dx0_dt[k]:.3e} <= 0 at t = {tr.t[k]:.6f}")


def _trace_rk4(metric, inits, domain, controls):
    n, h = metric.dim, controls.step
    z0, xi0 = pack_inits(inits)
    m = len(inits)
    f = lambda z: geodesic_rhs(metric, z, xi0, controls.dynamics)  # noqa: E731
    n_max = int(math.ceil(controls.t_max / h))
    states = [z0]
    active = np.ones(m, dtype=bool)
    exit_k = np.full(m, -1)
    # a ray is watched for exit once it has been strictly inside (interior starts
    # at once) or after the start-up steps that step it off the boundary
    armed = domain.boundary_value(z0[:, :n]) < -INSIDE_TOL
    z = z0
    for k in range(n_max):
        z = rk4_step(f, z, np.where(active, h, 0.0)[:, None])
        states.append(z)
        phi = domain.boundary_value(z[:, :n])
        hit = active & (armed | (k + 1 >= controls.skip_steps)) & (phi >= 0)
        exit_k[hit] = k
        active &= ~hit
        armed |= phi < -INSIDE_TOL
        if not active.any():
            break
    S = np.stack(states)
    last = len(states) - 1

    # localize each exit on the cubic Hermite interpolant of the bracketing step
    kk = np.where(exit_k >= 0, exit_k, 0)
    za, zb = S[kk, np.arange(m)], S[kk + 1, np.arange(m)]
    fa, fb = f(za), f(zb)
    lo, hi = np.zeros(m), np.full(m, h)
    n_bisect = int(math.ceil(math.log2(h / controls.event_tol))) + 1
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        zm = _hermite(za, zb, fa, fb, h, (mid / h)[:, None])
        outside = domain.boundary_value(zm[:, :n]) >= 0
        hi = np.where(outside, mid, hi)
        lo = np.where(outside, lo, mid)
    T = np.where(exit_k >= 0, kk * h + 0.5 * (lo + hi), last * h)
    status = ["exited" if k >= 0 else "no_exit" for k in exit_k]

    layout = [grid_layout(Tr, h) for Tr in T]
    heads = np.array([hd for hd, _ in layout])
    tails = np.array([tl for _, tl in layout])
    zh = S[heads, np.arange(m)]
    z1 = rk4_step(f, zh, 0.5 * tails[:, None])
    z2 = rk4_step(f, z1, 0.5 * tails[:, None])
    nodes = [np.concatenate([S[: heads[r] + 1, r], z1[r:r + 1], z2[r:r + 1]]) for r in range(m)]
    times = [grid_times(T[r], h) for r in range(m)]
    return _finish(metric, inits, nodes, times, T, status, h, heads, controls.dynamics, domain)


def _trace_rk45(metric, inits, domain, controls):
    n, h = metric.dim, controls.step
    nodes, times, T_list, status, heads = [], [], [], [], []
    for r, init in enumerate(inits):
        mr = metric.select(r)
        xi0 = np.array([init.eta0])
        fun = lambda t, z: geodesic_rhs(mr, z[None, :], xi0, controls.dynamics)[0]  # noqa: E731

        interior = float(domain.boundary_value(init.y[None])[0]) < -INSIDE_TOL

        def leave(t, z):
            if not interior and t < controls.skip_steps * h:
                return -1.0
            return float(domain.boundary_value(z[:n]))

        leave.terminal, leave.direction = True, 1.0
        z0 = np.concatenate([init.y, init.eta, [init.x0_start]])
        sol = solve_ivp(fun, (0.0, controls.t_max), z0, method="RK45", rtol=controls.rtol,
                        atol=controls.atol, events=leave, dense_output=True)
        if sol.t_events[0].size:
            Tr, st = float(sol.t_events[0][0]), "exited"
        else:
            Tr, st = float(sol.t[-1]), "no_exit"
        tt = grid_times(Tr, h)
        nodes.append(sol.sol(tt).T)
        times.append(tt)
        T_list.append(Tr)
        status.append(st)
        heads.append(grid_layout(Tr, h)[0])
    return _finish(metric, inits, nodes, times, T_list, status, h, heads, controls.dynamics, domain)


def trace_rays(metric: Metric, inits: Sequence[InitialData], domain: DomainSpec,
               controls: Optional[IntegratorControls] = None):
    """Trace a batch of rays until each first returns to the boundary."""
    controls = controls or IntegratorControls()
    if not inits:
        return []
    if controls.method == "rk4_fixed":
        trajs = _trace_rk4(metric, list(inits), domain, controls)
    else:
        trajs = _trace_rk45(metric, list(inits), domain, controls)
    for i, tr in enumerate(trajs):
        if not tr.exited:
            warnings.warn(f"ray {i} still inside the domain at t_max={controls.t_max}",
                          NoExitWarning, stacklevel=2)
    _check_forward(trajs)
    return trajs


def integrate_null_geodesic(metric: Metric, init: InitialData, domain: DomainSpec,
                            controls: Optional[IntegratorControls] = None) -> Trajectory:
    return trace_rays(metric, [init], domain, controls)[0]


def trace_interval(metric: Metric, inits: Sequence[InitialData], T, controls=None, domain=None):
    """Integrate rays over fixed intervals ``[0, T[r]]`` with no exit detection."""
    controls = controls or IntegratorControls()
    inits = list(inits)
    h = controls.step
    T = np.broadcast_to(np.asarray(T, dtype=float), (len(inits),))
    z0, xi0 = pack_inits(inits)
    f = lambda z: geodesic_rhs(metric, z, xi0, controls.dynamics)  # noqa: E731
    layout = [grid_layout(Tr, h) for Tr in T]
    heads = np.array([hd for hd, _ in layout])
    tails = np.array([tl for _, tl in layout])
    S = integrate_on_grids(f, z0, h, heads, tails)
    nodes = [S[: heads[r] + 3, r] for r in range(len(inits))]
    times = [grid_times(T[r], h) for r in range(len(inits))]
    return _finish(metric, inits, nodes, times, T, ["frozen"] * len(inits), h, heads,
                   controls.dynamics, domain)


def hamiltonian_drift(metric: Metric, trajectory: Trajectory, reference: float = 0.0) -> float:
    """Largest deviation of H along the nodes from ``reference`` (0 for null data)."""
    b = metric.blocks(trajectory.x)
    H = hamiltonian(b, trajectory.xi0, trajectory.xi)
    return float(np.max(np.abs(H - reference)))
