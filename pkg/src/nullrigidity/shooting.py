"""Forward null initial data on the boundary and fans of rays."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import DomainSpec
from .errors import EmptyFan, GrazingRayWarning, NoForwardRoot
from .flow import hamiltonian, spatial_velocity, time_rate
from .metric import Metric, eval_blocks

BOUNDARY_TOL = 1e-12
GRAZING_TOL = 1e-8


@dataclass(eq=False)
class InitialData:
    y: np.ndarray
    eta: np.ndarray
    eta0: float
    x0_start: float = 0.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.eta = np.asarray(self.eta, dtype=float)
        self.eta0 = float(self.eta0)

    def null_residual(self, metric: Metric) -> float:
        return float(hamiltonian(eval_blocks(metric, self.y), self.eta0, self.eta))


def null_covector(metric: Metric, y, eta) -> float:
    """Forward root eta0 of ``H(y, eta0, eta) = 0``.

    Solves ``1/2 q00 eta0^2 + (q0.eta) eta0 + 1/2 q' eta.eta = 0`` and keeps
    the root with ``q00 eta0 + q0.eta > 0``.
    """
    eta = np.asarray(eta, dtype=float)
    if not np.any(eta):
        raise ValueError("spatial covector must be non-zero")
    b = eval_blocks(metric, y)
    lin = float(b.q0 @ eta)
    quad = float(eta @ b.qprime @ eta)
    disc = lin * lin - b.q00 * quad
    if not disc > 0:
        raise NoForwardRoot(f"null condition has no forward root for eta={eta.tolist()} at y={list(y)}")
    root = math.sqrt(disc)
    # the forward root is (-lin + root)/q00; rewrite to avoid cancellation
    if lin > 0:
        return -quad / (lin + root)
    return (root - lin) / float(b.q00)


def make_initial_data(metric: Metric, y, eta) -> InitialData:
    return InitialData(y, eta, null_covector(metric, y, eta))


def aim_covector(metric: Metric, y, direction):
    """Unit covector whose spatial velocity at ``y`` is parallel to ``direction``."""
    b = eval_blocks(metric, y)
    eta = np.linalg.solve(b.qprime, np.asarray(direction, dtype=float))
    return eta / np.linalg.norm(eta)


@dataclass
class FanSpec:
    """Fan of rays launched from the boundary patch of radius ``epsilon`` about ``y0``.

    ``direction_rule`` is ``"inward_chords"`` (each ray aimed along the inward
    normal at its own base point) or ``"fixed_eta"`` (one shared covector
    ``eta``; by default the one aimed along the inward normal at ``y0``).
    """

    y0: np.ndarray
    epsilon: float
    count: int
    direction_rule: str = "inward_chords"
    eta: Optional[np.ndarray] = None

    def __post_init__(self):
        self.y0 = np.asarray(self.y0, dtype=float)
        if self.count < 1:
            raise ValueError("fan needs at least one ray")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.direction_rule not in ("inward_chords", "fixed_eta"):
            raise ValueError(f"unknown direction rule '{self.direction_rule}'")
        if self.eta is not None:
            self.eta = np.asarray(self.eta, dtype=float)


@dataclass
class FanResult:
    rays: list
    skipped: list = field(default_factory=list)  # (index, reason)


def _offsets(count, epsilon):
    if count == 1:
        return np.zeros(1)
    return np.linspace(-epsilon, epsilon, count)


def fan_base_points(domain: DomainSpec, y0, epsilon, count):
    """Base points equi-spaced (by boundary arc length) in the patch around ``y0``."""
    y0 = np.asarray(y0, dtype=float)
    s = _offsets(count, epsilon)
    c = domain.c
    if domain.kind == "ball":
        r = domain.radius
        u0 = (y0 - c) / np.linalg.norm(y0 - c)
        if domain.dim == 1:
            return np.tile(c + r * u0, (count, 1))
        # tangent direction of the great circle along which the patch is sampled
        if domain.dim == 2:
            t = np.array([-u0[1], u0[0]])
        else:
            e = np.eye(domain.dim)[int(np.argmin(np.abs(u0)))]
            t = e - (e @ u0) * u0
            t /= np.linalg.norm(t)
        ang = s / r
        return c + r * (np.cos(ang)[:, None] * u0 + np.sin(ang)[:, None] * t)
    hw = np.asarray(domain.half_widths)
    rel = (y0 - c) / hw
    face_axis = int(np.argmax(np.abs(rel)))
    tang = [k for k in range(domain.dim) if k != face_axis]
    pts = np.tile(y0, (count, 1))
    if tang:
        pts[:, tang[0]] += s
    return pts


def make_fan(domain: DomainSpec, metric: Metric, fan: FanSpec, dynamics="reduced",
             return_skipped=False):
    """Initial data for every ray of the fan.

    Rays that are tangent to the boundary or point outward at their base point
    are dropped with a :class:`GrazingRayWarning`; rays without a forward null
    root are dropped the same way.  Raises :class:`EmptyFan` if nothing is left.
    """
    if abs(domain.boundary_value(fan.y0)) > 1e-9:
        raise ValueError("fan anchor y0 is not on the boundary")
    pts = fan_base_points(domain, fan.y0, fan.epsilon, fan.count)
    if fan.direction_rule == "fixed_eta":
        shared = fan.eta
        if shared is None:
            shared = aim_covector(metric, fan.y0, -domain.boundary_gradient(fan.y0))
    rays, skipped = [], []
    for i, y in enumerate(pts):
        if fan.direction_rule == "fixed_eta":
            eta = shared
        else:
            eta = aim_covector(metric, y, -domain.boundary_gradient(y))
        try:
            eta0 = null_covector(metric, y, eta)
        except NoForwardRoot as exc:
            skipped.append((i, str(exc)))
            continue
        b = eval_blocks(metric, y)
        v = spatial_velocity(b, eta0, eta, dynamics)
        grad = domain.boundary_gradient(y)
        dot = float(grad @ v)
        if abs(dot) < GRAZING_TOL * np.linalg.norm(grad) * np.linalg.norm(v):
            skipped.append((i, "grazing at t=0"))
            continue
        if dot > 0:
            skipped.append((i, "points outward at t=0"))
            continue
        if not time_rate(b, eta0, eta) > 0:
            skipped.append((i, "not forward"))
            continue
        rays.append(InitialData(y, eta, eta0))
    for i, why in skipped:
        warnings.warn(f"fan ray {i} excluded: {why}", GrazingRayWarning, stacklevel=2)
    if not rays:
        raise EmptyFan("every ray of the fan was excluded")
    if return_skipped:
        return FanResult(rays, skipped)
    return rays


def fan_from_config(cfg: dict, domain: DomainSpec) -> FanSpec:
    if "y0" in cfg:
        y0 = np.asarray(cfg["y0"], dtype=float)
    else:
        y0 = domain.ball_point(cfg.get("y0_angle", 0.0))
    eta = cfg.get("eta")
    return FanSpec(y0, float(cfg.get("epsilon", 0.0)), int(cfg.get("count", 1)),
                   cfg.get("direction_rule", "inward_chords"),
                   None if eta is None else np.asarray(eta, dtype=float))
