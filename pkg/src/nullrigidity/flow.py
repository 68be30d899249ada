"""Hamiltonian and geodesic vector fields (batched).

The phase state of a ray is packed as ``z = (x_1..x_n, xi_1..xi_n, x0)``;
``xi0`` is conserved and passed separately, never integrated.

Two dynamics are available.  ``"reduced"`` is the block model used for all
variational work: ``dx/dt = q' xi``, ``dxi/dt = -1/2 (dq'/dx xi).xi`` and
``dx0/dt = q00 xi0 + q0.xi``.  It coincides with the full Hamiltonian flow
when the time row is ``(1, 0)``.  ``"hamiltonian"`` is the full flow of
``H = 1/2 q00 xi0^2 + xi0 q0.xi + 1/2 q' xi.xi`` and conserves ``H`` for every
family.
"""

from __future__ import annotations

import numpy as np

DYNAMICS = ("reduced", "hamiltonian")


def hamiltonian(blocks, xi0, xi):
    xi = np.asarray(xi)
    xi0 = np.asarray(xi0)
    return (
        0.5 * blocks.q00 * xi0**2
        + xi0 * np.einsum("...j,...j->...", blocks.q0, xi)
        + 0.5 * np.einsum("...i,...ij,...j->...", xi, blocks.qprime, xi)
    )


def spatial_velocity(blocks, xi0, xi, dynamics="reduced"):
    v = np.einsum("...ij,...j->...i", blocks.qprime, xi)
    if dynamics == "hamiltonian":
        v = v + np.asarray(xi0)[..., None] * blocks.q0
    return v


def time_rate(blocks, xi0, xi):
    """dx0/dt = dH/dxi0, used by both dynamics."""
    return blocks.q00 * xi0 + np.einsum("...j,...j->...", blocks.q0, xi)


def split(z, n):
    return z[:, :n], z[:, n:2 * n], z[:, 2 * n]


def geodesic_rhs(metric, z, xi0, dynamics="reduced"):
    """Right-hand side for a batch of packed states ``z`` of shape (m, 2n+1)."""
    n = metric.dim
    x, xi, _ = split(z, n)
    b = metric.blocks(x)
    d = metric.derivatives(x, 1)
    out = np.empty_like(z)
    out[:, :n] = spatial_velocity(b, xi0, xi, dynamics)
    dxi = -0.5 * np.einsum("mijk,mi,mj->mk", d.d1, xi, xi)
    if dynamics == "hamiltonian":
        dxi = dxi - 0.5 * d.dq00 * (xi0**2)[:, None] - xi0[:, None] * np.einsum("mjk,mj->mk", d.dq0, xi)
    out[:, n:2 * n] = dxi
    out[:, 2 * n] = time_rate(b, xi0, xi)
    return out
