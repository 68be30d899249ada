"""Bounded domains Omega with a signed boundary function."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc


@dataclass(frozen=True)
class DomainSpec:
    """A ball (``radius``) or an axis-aligned box (``half_widths``).

    ``boundary_value`` is negative inside, zero on the boundary and positive
    outside.  For a ball it is ``|x - center| - radius``; for a box it is the
    largest per-axis excess ``|x_i - c_i| - h_i``.
    """

    kind: str
    center: tuple
    radius: float = 1.0
    half_widths: tuple = ()

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError(f"unknown domain kind '{self.kind}'")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind == "ball" and not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.kind == "box":
            hw = tuple(float(h) for h in self.half_widths)
            if len(hw) != len(self.center) or min(hw) <= 0:
                raise ValueError("box needs one positive half-width per axis")
            object.__setattr__(self, "half_widths", hw)

    @classmethod
    def unit_ball(cls, dim=2):
        return cls("ball", (0.0,) * dim, 1.0)

    @property
    def dim(self):
        return len(self.center)

    @property
    def c(self):
        return np.asarray(self.center)

    def boundary_value(self, x):
        x = np.asarray(x, dtype=float)
        r = x - self.c
        if self.kind == "ball":
            return np.linalg.norm(r, axis=-1) - self.radius
        return np.max(np.abs(r) - np.asarray(self.half_widths), axis=-1)

    def boundary_gradient(self, x):
        """Gradient of the boundary function (unit outward normal on the boundary)."""
        x = np.asarray(x, dtype=float)
        r = x - self.c
        if self.kind == "ball":
            nr = np.linalg.norm(r, axis=-1, keepdims=True)
            return r / np.where(nr > 0, nr, 1.0)
        excess = np.abs(r) - np.asarray(self.half_widths)
        axis = np.argmax(excess, axis=-1)
        g = np.zeros_like(r)
        np.put_along_axis(g, axis[..., None], np.take_along_axis(np.sign(r), axis[..., None], -1), -1)
        return g

    def sample_interior(self, count, seed=0):
        """Quasi-random points strictly inside the domain.

        Scrambled Halton points seeded from a counter-based ``Philox``
        generator, so the sequence depends only on ``seed``.
        """
        rng = np.random.Generator(np.random.Philox(seed))
        sampler = qmc.Halton(d=self.dim, scramble=True, seed=rng)
        if self.kind == "box":
            u = sampler.random(count)
            return self.c + (2.0 * u - 1.0) * 0.999 * np.asarray(self.half_widths)
        pts = []
        have = 0
        while have < count:
            u = 2.0 * sampler.random(max(count, 64)) - 1.0
            u = u[np.linalg.norm(u, axis=1) < 0.999]
            pts.append(u)
            have += len(u)
        return self.c + self.radius * np.concatenate(pts)[:count]

    def ball_point(self, angles):
        """Boundary point of a ball addressed by angle (n=2) or spherical angles (n=3)."""
        if self.kind != "ball":
            raise ValueError("angle addressing only applies to ball domains")
        a = np.atleast_1d(np.asarray(angles, dtype=float))
        if self.dim == 2:
            u = np.array([np.cos(a[0]), np.sin(a[0])])
        elif self.dim == 3:
            theta, phi = a[0], (a[1] if a.size > 1 else 0.0)
            u = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        elif self.dim == 1:
            u = np.array([1.0 if np.cos(a[0]) >= 0 else -1.0])
        else:
            raise ValueError("angle addressing supports n = 1, 2, 3")
        return self.c + self.radius * u

    def to_config(self):
        cfg = {"kind": self.kind, "center": list(self.center)}
        if self.kind == "ball":
            cfg["radius"] = self.radius
        else:
            cfg["half_widths"] = list(self.half_widths)
        return cfg

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["kind"], tuple(cfg["center"]), float(cfg.get("radius", 1.0)),
                   tuple(cfg.get("half_widths", ())))


def boundary_value(domain: DomainSpec, x):
    return domain.boundary_value(x)
