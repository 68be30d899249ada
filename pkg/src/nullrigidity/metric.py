"""Static inverse Lorentzian metrics in time/space block form.

A metric on the cylinder R x Omega is described by its inverse tensor split
into blocks::

    [ q00   q0^T ]
    [ q0    q'   ]

with ``q00 > 0`` and ``q'`` negative definite.  Every family here is an
analytic function on all of R^n, so derivatives are exact and the families
can be evaluated outside the domain as well.

All evaluators are batched: ``x`` has shape ``(m, n)`` and block arrays carry
a leading axis of length ``m``.  The module-level helpers :func:`eval_blocks`
and :func:`eval_derivatives` accept single points for convenience.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, SignatureViolation, UnsupportedFamily

FAMILIES = ("minkowski", "conformal_bump", "diagonal_poly", "general_block")


@dataclass
class InverseMetricBlocks:
    q00: np.ndarray  # (m,)
    q0: np.ndarray  # (m, n)
    qprime: np.ndarray  # (m, n, n)

    def squeeze(self):
        return InverseMetricBlocks(self.q00[0], self.q0[0], self.qprime[0])

    def full(self):
        """Assemble the (n+1)x(n+1) inverse tensor (per point for batched blocks)."""
        lead, n = self.q0.shape[:-1], self.q0.shape[-1]
        g = np.empty(lead + (n + 1, n + 1), dtype=self.qprime.dtype)
        g[..., 0, 0] = self.q00
        g[..., 0, 1:] = self.q0
        g[..., 1:, 0] = self.q0
        g[..., 1:, 1:] = self.qprime
        return g


@dataclass
class MetricDerivatives:
    """Spatial derivatives of the blocks.

    ``d1[..., i, j, k] = d q'_ij / d x_k`` and the higher arrays append one
    derivative index each.  ``dq0[..., j, k] = d q0j / d x_k``.
    """

    d1: np.ndarray
    dq00: np.ndarray
    dq0: np.ndarray
    d2: Optional[np.ndarray] = None
    d2q00: Optional[np.ndarray] = None
    d2q0: Optional[np.ndarray] = None
    d3: Optional[np.ndarray] = None

    def squeeze(self):
        return MetricDerivatives(
            **{k: (None if v is None else v[0]) for k, v in self.__dict__.items()}
        )


def _zeros_derivs(m, n, order):
    z = np.zeros
    return MetricDerivatives(
        d1=z((m, n, n, n)),
        dq00=z((m, n)),
        dq0=z((m, n, n)),
        d2=z((m, n, n, n, n)) if order >= 2 else None,
        d2q00=z((m, n, n)) if order >= 2 else None,
        d2q0=z((m, n, n, n)) if order >= 2 else None,
        d3=z((m, n, n, n, n, n)) if order >= 3 else None,
    )


def _as_batch(x, n):
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != n:
        raise DimensionMismatch(f"point has dimension {x.shape[-1]}, metric expects {n}")
    return x


class Metric:
    """Base class for inverse metric fields (and differences of them)."""

    dim: int
    max_order: int = 3
    family: str = "abstract"

    def blocks(self, x) -> InverseMetricBlocks:
        raise NotImplementedError

    def derivatives(self, x, order=2) -> MetricDerivatives:
        raise NotImplementedError

    def _check_order(self, order):
        if order not in (1, 2, 3):
            raise ValueError(f"derivative order must be 1, 2 or 3, got {order}")
        if order > self.max_order:
            raise UnsupportedFamily(
                f"family '{self.family}' has analytic derivatives only up to order {self.max_order}"
            )

    @property
    def time_row_constant(self) -> bool:
        return False

    def select(self, index) -> "Metric":
        """The metric seen by ray ``index`` of a batch (itself unless per-ray)."""
        return self

    def to_config(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serializable")


class _ConstantTimeRow(Metric):
    q00_value: float = 1.0
    q0_value: np.ndarray

    @property
    def time_row_constant(self):
        return True

    def _time_blocks(self, m):
        return np.full(m, float(self.q00_value)), np.tile(self.q0_value, (m, 1))


class Minkowski(_ConstantTimeRow):
    family = "minkowski"

    def __init__(self, dim: int = 2):
        self.dim = int(dim)
        self.q0_value = np.zeros(self.dim)

    def blocks(self, x):
        x = _as_batch(x, self.dim)
        m = x.shape[0]
        q00, q0 = self._time_blocks(m)
        return InverseMetricBlocks(q00, q0, np.tile(-np.eye(self.dim), (m, 1, 1)))

    def derivatives(self, x, order=2):
        self._check_order(order)
        x = _as_batch(x, self.dim)
        return _zeros_derivs(x.shape[0], self.dim, order)

    def to_config(self):
        return {"family": "minkowski", "dim": self.dim, "params": {}}


class ConformalBump(_ConstantTimeRow):
    """``q' = -(1 + a*g(x))^2 I`` with a radial bump profile ``g``.

    ``g`` is a function of ``s = |x - c|^2 / sigma^2``: ``exp(-s/2)`` for the
    Gaussian profile, ``(1 - s)^4`` on ``s < 1`` for the compact profile (C^3,
    support of radius ``sigma``).
    """

    family = "conformal_bump"

    def __init__(self, a: float, center: Sequence[float], sigma: float, profile: str = "gaussian"):
        self.a = float(a)
        self.center = np.asarray(center, dtype=float)
        self.dim = self.center.size
        self.sigma = float(sigma)
        if self.sigma <= 0:
            raise ValueError("bump width sigma must be positive")
        if profile not in ("gaussian", "compact"):
            raise ValueError(f"unknown bump profile '{profile}'")
        self.profile = profile
        self.q0_value = np.zeros(self.dim)

    def _profile(self, s):
        """Profile and its first three derivatives with respect to s."""
        if self.profile == "gaussian":
            p = np.exp(-0.5 * s)
            return p, -0.5 * p, 0.25 * p, -0.125 * p
        inside = s < 1.0
        u = np.where(inside, 1.0 - s, 0.0)
        return u**4, -4.0 * u**3, 12.0 * u**2, -24.0 * u

    def _g(self, x, order):
        r = x - self.center
        sig2 = self.sigma**2
        s = np.einsum("mk,mk->m", r, r) / sig2
        p0, p1, p2, p3 = self._profile(s)
        out = [p0]
        if order >= 1:
            sk = 2.0 * r / sig2
            out.append(p1[:, None] * sk)
        if order >= 2:
            eye = np.eye(self.dim)
            skl = 2.0 * eye / sig2
            gkl = p2[:, None, None] * sk[:, :, None] * sk[:, None, :] + p1[:, None, None] * skl
            out.append(gkl)
        if order >= 3:
            sss = sk[:, :, None, None] * sk[:, None, :, None] * sk[:, None, None, :]
            mix = (
                skl[None, :, :, None] * sk[:, None, None, :]
                + skl[None, :, None, :] * sk[:, None, :, None]
                + skl[None, None, :, :] * sk[:, :, None, None]
            )
            out.append(p3[:, None, None, None] * sss + p2[:, None, None, None] * mix)
        return out

    def blocks(self, x):
        x = _as_batch(x, self.dim)
        m = x.shape[0]
        (g,) = self._g(x, 0)
        w = (1.0 + self.a * g) ** 2
        q00, q0 = self._time_blocks(m)
        return InverseMetricBlocks(q00, q0, -w[:, None, None] * np.eye(self.dim))

    def derivatives(self, x, order=2):
        self._check_order(order)
        x = _as_batch(x, self.dim)
        m, n, a = x.shape[0], self.dim, self.a
        gs = self._g(x, order)
        S = 1.0 + a * gs[0]
        eye = np.eye(n)
        out = _zeros_derivs(m, n, order)
        gk = gs[1]
        wk = 2.0 * a * S[:, None] * gk
        out.d1 = -np.einsum("ij,mk->mijk", eye, wk)
        if order >= 2:
            gkl = gs[2]
            wkl = 2.0 * a * (a * gk[:, :, None] * gk[:, None, :] + S[:, None, None] * gkl)
            out.d2 = -np.einsum("ij,mkl->mijkl", eye, wkl)
        if order >= 3:
            gklm = gs[3]
            sym = (
                gkl[:, :, :, None] * gk[:, None, None, :]
                + gkl[:, :, None, :] * gk[:, None, :, None]
                + gkl[:, None, :, :] * gk[:, :, None, None]
            )
            wklm = 2.0 * a * (a * sym + S[:, None, None, None] * gklm)
            out.d3 = -np.einsum("ij,mklp->mijklp", eye, wklm)
        return out

    def to_config(self):
        params = {"a": self.a, "center": self.center.tolist(), "sigma": self.sigma}
        if self.profile != "gaussian":
            params["profile"] = self.profile
        return {"family": "conformal_bump", "dim": self.dim, "params": params}


class DiagonalPoly(_ConstantTimeRow):
    """Diagonal ``q'`` whose entries are polynomials in x.

    ``diag[i]`` is a list of ``(coefficient, exponents)`` terms, so
    ``q'_ii(x) = sum_t c_t * prod_k x_k ** e_tk``.  The time row is constant.
    """

    family = "diagonal_poly"

    def __init__(self, diag, q00: float = 1.0, q0=None):
        self.dim = len(diag)
        self.terms = []
        for i, poly in enumerate(diag):
            coefs = np.array([float(c) for c, _ in poly])
            exps = np.array([list(e) for _, e in poly], dtype=int).reshape(len(poly), self.dim)
            if np.any(exps < 0):
                raise ValueError(f"negative exponent in diagonal entry {i}")
            self.terms.append((coefs, exps))
        self.q00_value = float(q00)
        self.q0_value = np.zeros(self.dim) if q0 is None else np.asarray(q0, dtype=float)
        self._tables = {}
        self._constant = all(not exps.any() for _, exps in self.terms)

    @classmethod
    def constant(cls, values, **kw):
        n = len(values)
        return cls([[(v, [0] * n)] for v in values], **kw)

    def _table(self, orders):
        """Exponents and scattered coefficients of the ``orders`` derivative of every term."""
        key = tuple(int(o) for o in orders)
        if key not in self._tables:
            o = np.array(key)
            exps, mats = [], []
            for i, (coefs, e_all) in enumerate(self.terms):
                for c, e in zip(coefs, e_all):
                    if np.any(o > e):
                        continue
                    factor = c
                    for k in range(self.dim):
                        factor *= math.perm(int(e[k]), int(o[k]))
                    row = np.zeros(self.dim)
                    row[i] = factor
                    exps.append(e - o)
                    mats.append(row)
            self._tables[key] = (np.array(exps, dtype=float).reshape(-1, self.dim),
                                 np.array(mats).reshape(-1, self.dim))
        return self._tables[key]

    def _eval(self, x, orders):
        """sum_t c_t * d^orders monomial_t at x, for each diagonal entry."""
        exps, mat = self._table(orders)
        if exps.shape[0] == 0:
            return np.zeros((x.shape[0], self.dim))
        if not exps.any():
            return np.broadcast_to(mat.sum(axis=0), (x.shape[0], self.dim)).copy()
        return np.prod(x[:, None, :] ** exps, axis=2) @ mat

    def blocks(self, x):
        x = _as_batch(x, self.dim)
        m = x.shape[0]
        q00, q0 = self._time_blocks(m)
        vals = self._eval(x, np.zeros(self.dim))
        return InverseMetricBlocks(q00, q0, vals[:, :, None] * np.eye(self.dim))

    def derivatives(self, x, order=2):
        self._check_order(order)
        x = _as_batch(x, self.dim)
        m, n = x.shape[0], self.dim
        out = _zeros_derivs(m, n, order)
        if self._constant:
            return out
        eye = np.eye(n, dtype=int)
        idx = np.arange(n)
        for k in range(n):
            out.d1[:, idx, idx, k] = self._eval(x, eye[k])
            if order >= 2:
                for l in range(n):
                    out.d2[:, idx, idx, k, l] = self._eval(x, eye[k] + eye[l])
                    if order >= 3:
                        for p in range(n):
                            out.d3[:, idx, idx, k, l, p] = self._eval(x, eye[k] + eye[l] + eye[p])
        return out

    def to_config(self):
        diag = [[[float(c), e.tolist()] for c, e in zip(coefs, exps)] for coefs, exps in self.terms]
        return {
            "family": "diagonal_poly",
            "dim": self.dim,
            "params": {"diag": diag, "q00": self.q00_value, "q0": self.q0_value.tolist()},
        }


class GeneralBlock(_ConstantTimeRow):
    """Constant blocks, including a non-zero time-space row."""

    family = "general_block"

    def __init__(self, q00: float, q0, qprime):
        self.q00_value = float(q00)
        self.q0_value = np.asarray(q0, dtype=float)
        self.dim = self.q0_value.size
        qp = np.asarray(qprime, dtype=float).reshape(self.dim, self.dim)
        self.qprime_value = 0.5 * (qp + qp.T)

    def blocks(self, x):
        x = _as_batch(x, self.dim)
        m = x.shape[0]
        q00, q0 = self._time_blocks(m)
        return InverseMetricBlocks(q00, q0, np.tile(self.qprime_value, (m, 1, 1)))

    def derivatives(self, x, order=2):
        self._check_order(order)
        x = _as_batch(x, self.dim)
        return _zeros_derivs(x.shape[0], self.dim, order)

    def to_config(self):
        return {
            "family": "general_block",
            "dim": self.dim,
            "params": {
                "q00": self.q00_value,
                "q0": self.q0_value.tolist(),
                "qprime": self.qprime_value.tolist(),
            },
        }


# -- combinations ---------------------------------------------------------------


def _map_blocks(fn, *bs):
    return InverseMetricBlocks(*(fn(*parts) for parts in zip(*(
        (b.q00, b.q0, b.qprime) for b in bs))))


_DERIV_FIELDS = ("d1", "dq00", "dq0", "d2", "d2q00", "d2q0", "d3")


def _map_derivs(fn, *ds):
    kw = {}
    for name in _DERIV_FIELDS:
        parts = [getattr(d, name) for d in ds]
        kw[name] = None if any(p is None for p in parts) else fn(*parts)
    return MetricDerivatives(**kw)


def _lerp(a, b, t):
    """Endpoint-exact linear interpolation; exact wherever a == b."""
    if np.ndim(t) == 0:
        t = float(t)
        return a + t * (b - a) if t < 0.5 else b - (1.0 - t) * (b - a)
    t = np.reshape(t, np.shape(t) + (1,) * (a.ndim - np.ndim(t)))
    return np.where(t < 0.5, a + t * (b - a), b - (1.0 - t) * (b - a))


def _check_dims(*metrics):
    dims = {m.dim for m in metrics}
    if len(dims) != 1:
        raise DimensionMismatch(f"metrics have different spatial dimensions {sorted(dims)}")


class Homotopy(Metric):
    """``q1 + tau*(q2 - q1)``; ``tau`` may be a scalar or one value per point."""

    family = "homotopy"

    def __init__(self, q1: Metric, q2: Metric, tau):
        _check_dims(q1, q2)
        self.q1, self.q2 = q1, q2
        tau = np.asarray(tau, dtype=float)
        if tau.ndim and tau.size and np.all(tau == tau.flat[0]):
            tau = tau.flat[0]
        self.tau = np.asarray(tau, dtype=float)
        self.dim = q1.dim
        self.max_order = min(q1.max_order, q2.max_order)

    @property
    def time_row_constant(self):
        return self.q1.time_row_constant and self.q2.time_row_constant

    def select(self, index):
        if self.tau.ndim == 0:
            return self
        return Homotopy(self.q1, self.q2, self.tau[index])

    def _endpoint(self):
        # the lerp is exact at the endpoints, so skip the unused metric
        if self.tau.ndim == 0 and self.tau in (0.0, 1.0):
            return self.q1 if self.tau == 0.0 else self.q2
        return None

    def blocks(self, x):
        end = self._endpoint()
        if end is not None:
            return end.blocks(x)
        t = self.tau
        return _map_blocks(lambda a, b: _lerp(a, b, t), self.q1.blocks(x), self.q2.blocks(x))

    def derivatives(self, x, order=2):
        self._check_order(order)
        end = self._endpoint()
        if end is not None:
            return end.derivatives(x, order)
        t = self.tau
        return _map_derivs(
            lambda a, b: _lerp(a, b, t), self.q1.derivatives(x, order), self.q2.derivatives(x, order)
        )


class Difference(Metric):
    """Perturbation field ``q2 - q1`` (not itself a Lorentzian metric)."""

    family = "difference"

    def __init__(self, q2: Metric, q1: Metric):
        _check_dims(q1, q2)
        self.q1, self.q2 = q1, q2
        self.dim = q1.dim
        self.max_order = min(q1.max_order, q2.max_order)

    def blocks(self, x):
        return _map_blocks(np.subtract, self.q2.blocks(x), self.q1.blocks(x))

    def derivatives(self, x, order=2):
        self._check_order(order)
        return _map_derivs(np.subtract, self.q2.derivatives(x, order), self.q1.derivatives(x, order))


class Perturbed(Metric):
    """``base + sum_k c_k * (member_k - base)``.

    Members are full metrics; each contributes the perturbation direction
    ``member_k - base``, which vanishes exactly wherever the two agree.
    """

    family = "perturbed"

    def __init__(self, base: Metric, members: Sequence[Metric], coefficients: Sequence[float]):
        members = list(members)
        if len(members) != len(coefficients):
            raise ValueError("need one coefficient per basis member")
        _check_dims(base, *members)
        self.base, self.members = base, members
        self.coefficients = [float(c) for c in coefficients]
        self.dim = base.dim
        self.max_order = min([base.max_order] + [mem.max_order for mem in members])

    @property
    def time_row_constant(self):
        return self.base.time_row_constant and all(m.time_row_constant for m in self.members)

    def blocks(self, x):
        b = self.base.blocks(x)
        out = InverseMetricBlocks(b.q00.copy(), b.q0.copy(), b.qprime.copy())
        for c, mem in zip(self.coefficients, self.members):
            out = _map_blocks(lambda o, mb, bb: o + c * (mb - bb), out, mem.blocks(x), b)
        return out

    def derivatives(self, x, order=2):
        self._check_order(order)
        b = self.base.derivatives(x, order)
        out = _map_derivs(np.copy, b)
        for c, mem in zip(self.coefficients, self.members):
            out = _map_derivs(lambda o, mb, bb: o + c * (mb - bb), out, mem.derivatives(x, order), b)
        return out

    def to_config(self):
        return {
            "family": "perturbed",
            "base": self.base.to_config(),
            "basis": [m.to_config() for m in self.members],
            "coefficients": list(self.coefficients),
        }


class StrictGoursat(Metric):
    """Pins ``q00 = 1`` and ``q0 = 0`` while keeping the spatial block."""

    family = "strict_goursat"

    def __init__(self, inner: Metric):
        self.inner = inner
        self.dim = inner.dim
        self.max_order = inner.max_order

    @property
    def time_row_constant(self):
        return True

    def blocks(self, x):
        b = self.inner.blocks(x)
        return InverseMetricBlocks(np.ones_like(b.q00), np.zeros_like(b.q0), b.qprime)

    def derivatives(self, x, order=2):
        d = self.inner.derivatives(x, order)
        for name in ("dq00", "dq0", "d2q00", "d2q0"):
            v = getattr(d, name)
            if v is not None:
                setattr(d, name, np.zeros_like(v))
        return d

    def to_config(self):
        cfg = dict(self.inner.to_config())
        cfg["strict_goursat"] = True
        return cfg


# -- public operations ----------------------------------------------------------


def eval_blocks(metric: Metric, x) -> InverseMetricBlocks:
    """Blocks at a single point (1-D ``x``) or a batch of points."""
    single = np.ndim(x) == 1
    b = metric.blocks(x)
    return b.squeeze() if single else b


def eval_derivatives(metric: Metric, x, order: int = 1) -> MetricDerivatives:
    single = np.ndim(x) == 1
    d = metric.derivatives(x, order)
    return d.squeeze() if single else d


def homotopy(q1: Metric, q2: Metric, tau) -> Homotopy:
    return Homotopy(q1, q2, tau)


@dataclass
class SignatureReport:
    passed: bool
    samples: int
    first_failure: Optional[np.ndarray] = None
    reason: str = ""
    min_negative_gap: float = field(default=float("nan"))


def validate_signature(metric: Metric, domain, samples: int = 256, seed: int = 0,
                       strict: bool = False) -> SignatureReport:
    """Check signature (+,-,...,-) and negative-definite ``q'`` at interior samples.

    The points come from a scrambled Halton sequence seeded by ``seed``.  With
    ``strict=True`` a failure raises :class:`SignatureViolation`.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts = domain.sample_interior(samples, seed=seed)
    b = metric.blocks(pts)
    full_eigs = np.linalg.eigvalsh(b.full())
    qp_eigs = np.linalg.eigvalsh(b.qprime)
    ok_full = (np.sum(full_eigs > 0, axis=1) == 1) & (np.sum(full_eigs < 0, axis=1) == metric.dim)
    ok = ok_full & np.all(qp_eigs < 0, axis=1) & (b.q00 > 0)
    gap = float(-qp_eigs.max()) if qp_eigs.size else float("nan")
    if ok.all():
        return SignatureReport(True, samples, min_negative_gap=gap)
    first = int(np.argmin(ok))
    reason = "full tensor signature" if not ok_full[first] else "q' not negative definite or q00 <= 0"
    report = SignatureReport(False, samples, pts[first], reason, gap)
    if strict:
        raise SignatureViolation(pts[first], reason)
    return report


# -- serialization --------------------------------------------------------------


def metric_from_config(cfg: dict, dim: Optional[int] = None) -> Metric:
    """Build a metric from its scenario-config dictionary."""
    family = cfg.get("family")
    params = cfg.get("params", {})
    if family == "perturbed":
        base = metric_from_config(cfg["base"], dim)
        members = [metric_from_config(m, base.dim) for m in cfg["basis"]]
        return Perturbed(base, members, cfg["coefficients"])
    if family == "minkowski":
        metric = Minkowski(cfg.get("dim", dim or 2))
    elif family == "conformal_bump":
        metric = ConformalBump(params["a"], params["center"], params["sigma"],
                               params.get("profile", "gaussian"))
    elif family == "diagonal_poly":
        diag = [[(c, e) for c, e in poly] for poly in params["diag"]]
        metric = DiagonalPoly(diag, params.get("q00", 1.0), params.get("q0"))
    elif family == "general_block":
        q0 = params.get("q0")
        n = len(q0) if q0 is not None else cfg.get("dim", dim or 2)
        metric = GeneralBlock(params.get("q00", 1.0), q0 if q0 is not None else np.zeros(n),
                              params.get("qprime", (-np.eye(n)).tolist()))
    else:
        raise ValueError(f"unknown metric family '{family}'")
    if "dim" in cfg and metric.dim != cfg["dim"]:
        raise DimensionMismatch(f"family parameters give dim {metric.dim}, config says {cfg['dim']}")
    if cfg.get("strict_goursat"):
        metric = StrictGoursat(metric)
    return metric
