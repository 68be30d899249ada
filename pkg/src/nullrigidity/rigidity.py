"""Weighted perturbation norms, empirical stability constants, recovery and scans.

For a fan of rays traced in ``q1`` the module compares the length difference
``L(q2) - L(q1)`` over the frozen exit interval with the weighted norm::

    ||q2 - q1|| = sup_tau int e^{-2Nt} |dq'(x_tau)| dt
                + sup_tau int e^{-2Nt} |d/dx dq'(x_tau)| dt
                + sum_j sup_tau int |dq^{0j}(x_tau)| dt,

measures the constants of the quadratic remainder bound ``|G2| <= C_N ||dq||^2``
and decides whether the fan is inside the smallness regime
``||dq|| < l0 / (2 C_N)`` in which ``(l0/2) ||dq|| <= |dL|`` holds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .domain import DomainSpec
from .errors import DegenerateNorm, EmptyFan, LeftDomainWarning, NoForwardRoot, RankDeficientWarning
from .integrator import IntegratorControls, Trajectory, trace_interval, trace_rays
from .length import lengths_of, simpson
from .metric import Difference, Homotopy, Metric, Perturbed
from .shooting import FanSpec, InitialData, aim_covector, make_fan, null_covector
from .variation import length_variations, linear_parts, q_matrix, variations

DEFAULT_TAU_GRID = 5

VERDICT_IDENTICAL = "identical along fan"
VERDICT_INVISIBLE = "not rigid-testable from Γ_{y₀}"
VERDICT_RIGID = "rigid-regime"
VERDICT_OUTSIDE = "outside smallness regime"


@dataclass
class NormBreakdown:
    term_qprime: float
    term_dqprime: float
    term_timerow: float
    total: float
    N_used: float
    tau_grid: List[float]
    # tau samples realizing each sup
    argsup_tau: List[float] = field(default_factory=list)
    # e^{-Nt}-weighted counterparts, used by the estimate ratios
    single_qprime: float = 0.0
    single_dqprime: float = 0.0

    def to_dict(self):
        return asdict(self)


@dataclass
class RayRecord:
    ray: int
    T: float
    L1: float
    L2: float
    delta_L: float
    l_value: float
    G2: float
    norm: NormBreakdown
    ratio: float
    estimates: dict = field(default_factory=dict)
    chain_holds: bool = True

    def to_dict(self):
        d = asdict(self)
        d["norm"] = self.norm.to_dict()
        return d


@dataclass
class RigidityReport:
    rays: List[RayRecord]
    min_ratio: Optional[float]
    max_ratio: Optional[float]
    C_N: float
    l0_estimate: float
    N: float
    verdict: str
    stability_margin: float = float("nan")
    skipped: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)

    @property
    def aggregates(self):
        return {"min_ratio": self.min_ratio, "max_ratio": self.max_ratio, "C_N": self.C_N,
                "l0_estimate": self.l0_estimate, "N": self.N, "verdict": self.verdict,
                "stability_margin": self.stability_margin}

    def to_dict(self):
        return {"rays": [r.to_dict() for r in self.rays], "aggregates": self.aggregates,
                "estimates": self.estimates, "skipped": [list(s) for s in self.skipped]}


@dataclass
class PerturbationBasis:
    """Perturbation directions ``member_k - base`` given by full metrics ``member_k``."""

    members: List[Metric]
    coefficients: Optional[np.ndarray] = None

    def metric(self, base: Metric, coefficients=None) -> Metric:
        c = self.coefficients if coefficients is None else coefficients
        return Perturbed(base, self.members, np.asarray(c, dtype=float))

    def __len__(self):
        return len(self.members)


@dataclass
class RecoveryResult:
    coefficients: np.ndarray
    residual: float
    condition: float
    sensitivity: np.ndarray
    reg: float


# -- weight selection ----------------------------------------------------------


def weight_profile(q1: Metric, baseline: Trajectory):
    """Largest eigenvalue of the symmetric part of ``Q`` at every baseline node."""
    Q = q_matrix(q1, baseline.x, baseline.xi)
    return np.linalg.eigvalsh(0.5 * (Q + np.swapaxes(Q, 1, 2)))[:, -1]


def _refined_max(t, mu):
    i = int(np.argmax(mu))
    peak = float(mu[i])
    if 0 < i < mu.size - 1:
        a, b, c = np.polyfit(t[i - 1:i + 2] - t[i], mu[i - 1:i + 2], 2)
        if a < 0:
            peak = max(peak, float(c - b * b / (4 * a)))
    return peak


def select_weight_N(q1: Metric, baseline: Trajectory, margin: float = 1.1) -> float:
    """``N = max(1, margin * max_t mu(t))`` so that ``N I - sym(Q)`` is positive definite."""
    return max(1.0, margin * _refined_max(baseline.t, weight_profile(q1, baseline)))


# -- norms ---------------------------------------------------------------------


def tau_samples(count: int):
    if count < 1:
        raise ValueError("tau grid needs at least one sample")
    return [0.0] if count == 1 else np.linspace(0.0, 1.0, count).tolist()


def homotopy_paths(q1: Metric, q2: Metric, inits: Sequence[InitialData], T, taus, controls=None,
                   domain=None):
    """Trajectories ``x_tau`` over ``[0, T[r]]`` for every tau sample; indexed [tau][ray].

    All (tau, ray) pairs are integrated as one batch.
    """
    inits = list(inits)
    m = len(inits)
    T = np.broadcast_to(np.asarray(T, dtype=float), (m,))
    tau_rows = np.repeat(np.asarray(taus, dtype=float), m)
    flat = trace_interval(Homotopy(q1, q2, tau_rows), inits * len(taus), np.tile(T, len(taus)),
                          controls, domain)
    return [flat[k * m:(k + 1) * m] for k in range(len(taus))]


def _path_integrands(delta: Metric, path: Trajectory):
    x = path.x
    e = delta.blocks(x)
    ed = delta.derivatives(x, 1)
    fq = np.sqrt(np.einsum("mij,mij->m", e.qprime, e.qprime))
    fd = np.sqrt(np.einsum("mijk,mijk->m", ed.d1, ed.d1))
    ft = np.abs(np.concatenate([e.q00[:, None], e.q0], axis=1))
    return fq, fd, ft


def norm_along_paths(delta: Metric, paths: Sequence[Trajectory], N: float, taus) -> NormBreakdown:
    """Norm of the perturbation field ``delta`` along fixed trajectories (one per tau sample)."""
    rows = []
    for path in paths:
        t, head = path.t, path.head
        fq, fd, ft = _path_integrands(delta, path)
        w2 = np.exp(-2.0 * N * t)
        w1 = np.exp(-N * t)
        rows.append([simpson(t, w2 * fq, head), simpson(t, w2 * fd, head),
                     simpson(t, w1 * fq, head), simpson(t, w1 * fd, head)]
                    + list(simpson(t, ft, head)))
    rows = np.array(rows)
    sup = rows.max(axis=0)
    arg = rows.argmax(axis=0)
    tq, td, tt = float(sup[0]), float(sup[1]), float(np.sum(sup[4:]))
    return NormBreakdown(
        term_qprime=tq, term_dqprime=td, term_timerow=tt, total=tq + td + tt, N_used=float(N),
        tau_grid=[float(s) for s in taus], argsup_tau=[float(taus[k]) for k in arg[[0, 1]]],
        single_qprime=float(sup[2]), single_dqprime=float(sup[3]),
    )


def perturbation_norm(q1: Metric, q2: Metric, init: InitialData, T: float, N: float,
                      tau_count: int = DEFAULT_TAU_GRID, controls=None) -> NormBreakdown:
    taus = tau_samples(tau_count)
    paths = homotopy_paths(q1, q2, [init], T, taus, controls)
    return norm_along_paths(Difference(q2, q1), [p[0] for p in paths], N, taus)


# -- estimates -----------------------------------------------------------------


def _ratio(lhs, rhs, what):
    if rhs > 0:
        return float(lhs / rhs)
    if lhs == 0:
        return 0.0
    raise DegenerateNorm(f"{what}: left side {lhs:.3e} with vanishing right side")


def ray_estimates(first, norm: NormBreakdown, G2: float) -> dict:
    """Ratios LHS/RHS of the first variation, second variation, time variation and
    remainder bounds along one ray (variations taken at tau = 0)."""
    t, head, N = first.t, first.baseline.head, norm.N_used
    w1, w2 = np.exp(-N * t), np.exp(-2.0 * N * t)
    a = np.linalg.norm(first.dx_dtau, axis=1) + np.linalg.norm(first.dxi_dtau, axis=1)
    out = {
        "first_variation": _ratio(np.max(w1 * a), norm.single_qprime + norm.single_dqprime,
                                  "first variation"),
        "time_variation": _ratio(np.max(np.abs(first.dx0_dtau)), norm.term_timerow + np.max(a),
                                 "time variation"),
        "remainder": _ratio(abs(G2), norm.total**2, "remainder"),
    }
    if first.d2x_dtau2 is not None:
        a2 = np.linalg.norm(first.d2x_dtau2, axis=1) + np.linalg.norm(first.d2xi_dtau2, axis=1)
        sq = np.sum(first.dx_dtau**2, axis=1) + np.sum(first.dxi_dtau**2, axis=1)
        rhs = simpson(t, w2 * sq, head) + norm.single_qprime**2 + norm.single_dqprime**2
        out["second_variation"] = _ratio(np.max(w2 * a2), rhs, "second variation")
    return out


def estimate_report(records: Sequence[RayRecord]) -> dict:
    """Aggregated estimate ratios (max over rays) and the measured remainder constant."""
    keys = sorted({k for r in records for k in r.estimates})
    agg = {k: max((r.estimates[k] for r in records if k in r.estimates), default=0.0) for k in keys}
    visible = [r for r in records if r.norm.total > 0]
    agg["C_N"] = max((abs(r.G2) / r.norm.total**2 for r in visible), default=0.0)
    return agg


# -- stability check -----------------------------------------------------------


def metrics_identical(q1: Metric, q2: Metric, domain: DomainSpec, samples: int = 256,
                      seed: int = 0) -> bool:
    """True if blocks and first derivatives of both metrics agree exactly at sample points of Ω."""
    x = domain.sample_interior(samples, seed)
    b1, b2 = q1.blocks(x), q2.blocks(x)
    d1, d2 = q1.derivatives(x, 1), q2.derivatives(x, 1)
    pairs = [(b1.q00, b2.q00), (b1.q0, b2.q0), (b1.qprime, b2.qprime), (d1.d1, d2.d1),
             (d1.dq00, d2.dq00), (d1.dq0, d2.dq0)]
    return all(np.array_equal(u, v) for u, v in pairs)


def _resolve_N(N, q1, baselines, groups):
    if N != "auto":
        return np.full(len(baselines), float(N))
    own = np.array([select_weight_N(q1, b) for b in baselines])
    out = np.empty_like(own)
    for g in np.unique(groups):
        out[groups == g] = own[groups == g].max()
    return out


def _analyze(q1, q2, inits, domain, controls, N="auto", tau_count=DEFAULT_TAU_GRID, groups=None):
    """Per-ray records for a batch of rays; ``groups`` labels rays sharing one weight N.

    Returns (records, N per ray, skipped) where rays that do not exit are skipped.
    """
    controls = controls or IntegratorControls()
    inits = list(inits)
    groups = np.zeros(len(inits), dtype=int) if groups is None else np.asarray(groups)
    baselines = trace_rays(q1, inits, domain, controls)
    keep = [i for i, b in enumerate(baselines) if b.exited]
    skipped = [(i, "no exit") for i, b in enumerate(baselines) if not b.exited]
    baselines = [baselines[i] for i in keep]
    inits = [inits[i] for i in keep]
    groups = groups[keep] if keep else groups[:0]
    if not baselines:
        return [], np.zeros(0), skipped, keep
    T = np.array([b.t[-1] for b in baselines])
    Nr = _resolve_N(N, q1, baselines, groups)

    firsts, _ = variations(q1, q2, 0.0, baselines, second=True)
    L1 = [rec.L for rec in lengths_of(q1, baselines)]
    taus = tau_samples(tau_count)
    # the tau = 1 path is the q2 trace (the homotopy is exact at the endpoints)
    path_taus = taus if taus[-1] == 1.0 else taus + [1.0]
    paths = homotopy_paths(q1, q2, inits, T, path_taus, controls, domain)
    traj2 = paths[-1]
    left = [keep[i] for i, tr in enumerate(traj2) if tr.left_domain]
    if left:
        warnings.warn(f"{len(left)} ray(s) leave the domain in q2 before the q1 exit time: {left}",
                      LeftDomainWarning, stacklevel=3)
    L2 = [rec.L for rec in lengths_of(q2, traj2)]
    lvs = length_variations(q1, q2, baselines, firsts, L1, L2)
    paths = paths[:len(taus)]

    delta = Difference(q2, q1)
    records = []
    for r, (b, lv, vt) in enumerate(zip(baselines, lvs, firsts)):
        nb = norm_along_paths(delta, [p[r] for p in paths], Nr[r], taus)
        dL = lv.L2 - lv.L1
        if nb.total > 0:
            ratio = abs(dL) / nb.total
        elif dL == 0 and lv.G2 == 0:
            ratio = 0.0
        else:
            raise DegenerateNorm(f"ray {keep[r]}: zero norm with length difference {dL:.3e}")
        records.append(RayRecord(ray=keep[r], T=float(T[r]), L1=lv.L1, L2=lv.L2, delta_L=dL,
                                 l_value=lv.l_value, G2=lv.G2, norm=nb, ratio=float(ratio),
                                 estimates=ray_estimates(vt, nb, lv.G2)))
    return records, Nr, skipped, keep


def summarize(records, N, q1=None, q2=None, domain=None, skipped=(), seed=0) -> RigidityReport:
    """Fan aggregates and verdict from per-ray records."""
    visible = [r for r in records if r.norm.total > 0]
    estimates = estimate_report(records)
    if not visible:
        identical = q1 is None or metrics_identical(q1, q2, domain, seed=seed)
        verdict = VERDICT_IDENTICAL if identical else VERDICT_INVISIBLE
        return RigidityReport(records, None, None, 0.0, 0.0, float(N), verdict,
                              skipped=list(skipped), estimates=estimates)
    ratios = [r.ratio for r in visible]
    C_N = estimates["C_N"]
    best = max(visible, key=lambda r: abs(r.l_value) / r.norm.total)
    l0 = abs(best.l_value) / best.norm.total
    threshold = l0 / (2.0 * C_N) if C_N > 0 else math.inf
    for r in records:
        r.chain_holds = bool(abs(r.l_value) <= abs(r.delta_L) + C_N * r.norm.total**2
                             + 1e-14 * max(1.0, abs(r.L1)))
    verdict = VERDICT_RIGID if best.norm.total < threshold else VERDICT_OUTSIDE
    return RigidityReport(records, float(min(ratios)), float(max(ratios)), float(C_N), float(l0),
                          float(N), verdict, stability_margin=float(threshold - best.norm.total),
                          skipped=list(skipped), estimates=estimates)


def stability_check(q1: Metric, q2: Metric, fan: FanSpec, domain: DomainSpec,
                    controls: IntegratorControls = None, N="auto",
                    tau_count: int = DEFAULT_TAU_GRID, seed: int = 0) -> RigidityReport:
    """Rigidity report over a fan launched in ``q1``.

    ``N`` is a number or ``"auto"`` (largest :func:`select_weight_N` over the fan).
    """
    inits = make_fan(domain, q1, fan, (controls or IntegratorControls()).dynamics)
    records, Nr, skipped, _ = _analyze(q1, q2, inits, domain, controls, N, tau_count)
    N_used = float(Nr.max()) if Nr.size else (float(N) if N != "auto" else 1.0)
    return summarize(records, N_used, q1, q2, domain, skipped, seed)


# -- linearized recovery -------------------------------------------------------


def sensitivity_matrix(q1: Metric, basis: PerturbationBasis, baselines: Sequence[Trajectory]):
    """``A[r, k] = l(member_k - q1)`` along ray ``r``."""
    return np.stack([linear_parts(q1, member, baselines) for member in basis.members], axis=1)


def linearized_recover(q1: Metric, basis: PerturbationBasis, baselines: Sequence[Trajectory],
                       observed_delta_L, reg: Optional[float] = None) -> RecoveryResult:
    """Ridge least squares ``min |A c - dL|^2 + reg |c|^2`` via the normal equations.

    ``reg`` defaults to ``1e-10 * trace(A^T A) / K``.
    """
    if len(basis) == 0:
        raise ValueError("recovery basis is empty")
    b = np.asarray(observed_delta_L, dtype=float)
    if b.shape != (len(baselines),) or not np.all(np.isfinite(b)):
        raise ValueError("observed length differences must be finite, one per ray")
    A = sensitivity_matrix(q1, basis, baselines)
    G = A.T @ A
    K = G.shape[0]
    if reg is None:
        reg = 1e-10 * np.trace(G) / K
    cond = float(np.linalg.cond(G))
    if not cond <= 1e12:
        warnings.warn(f"sensitivity Gram matrix is ill-conditioned (cond = {cond:.3e}); "
                      "the fan does not separate the basis", RankDeficientWarning, stacklevel=2)
    c = np.linalg.lstsq(G + reg * np.eye(K), A.T @ b, rcond=None)[0]
    nb = np.linalg.norm(b)
    residual = float(np.linalg.norm(A @ c - b) / nb) if nb > 0 else 0.0
    return RecoveryResult(c, residual, cond, A, float(reg))


def synthetic_data(q1: Metric, q_true: Metric, inits, domain, controls: IntegratorControls):
    """Observed length differences over the q1 exit intervals, from an independent trace."""
    base = trace_rays(q1, inits, domain, controls)
    T = [b.t[-1] for b in base]
    true = trace_interval(q_true, inits, T, controls, domain)
    return np.array([r2.L - r1.L for r1, r2 in zip(lengths_of(q1, base), lengths_of(q_true, true))])


# -- global scan ---------------------------------------------------------------


def scan_directions(dim: int, count: Optional[int] = None):
    """Axis-aligned then diagonal unit directions, at most 8 by default."""
    dirs = []
    for i in range(dim):
        for s in (1.0, -1.0):
            e = np.zeros(dim)
            e[i] = s
            dirs.append(e)
    if dim > 1:
        for signs in np.array(np.meshgrid(*[[1.0, -1.0]] * dim, indexing="ij")).reshape(dim, -1).T:
            dirs.append(signs / math.sqrt(dim))
    count = min(len(dirs), 8) if count is None else count
    return dirs[:count]


def scan_grid(domain: DomainSpec, count: int, kind: str = "uniform", seed: int = 0):
    """Interior scan points: a ``count``-per-axis uniform grid or ``count`` sampled points."""
    if kind == "random":
        return domain.sample_interior(count, seed)
    if kind != "uniform":
        raise ValueError(f"unknown scan grid kind '{kind}'")
    c = domain.c
    half = (np.full(domain.dim, domain.radius) if domain.kind == "ball"
            else np.asarray(domain.half_widths, dtype=float))
    axes = [np.linspace(-h, h, count + 2)[1:-1] for h in half]
    pts = c + np.array(np.meshgrid(*axes, indexing="ij")).reshape(domain.dim, -1).T
    return pts[domain.boundary_value(pts) < -1e-6]


@dataclass
class TubeRecord:
    point: list
    direction: list
    entry: Optional[list]
    status: str
    min_ratio: Optional[float] = None
    max_norm: float = 0.0
    rays: int = 0
    T_forward: float = float("nan")
    T_backward: float = float("nan")


@dataclass
class ScanReport:
    coverage: float
    tubes: List[TubeRecord]
    points: list
    covered: List[bool]

    def to_dict(self):
        return {"coverage": self.coverage, "tubes": [asdict(t) for t in self.tubes],
                "points": self.points, "covered": self.covered}


def _tube_status(records):
    norms = [r.norm.total for r in records]
    if all(n == 0 for n in norms):
        return VERDICT_IDENTICAL, None, 0.0
    ratios = [r.ratio for r in records if r.norm.total > 0]
    mr = float(min(ratios))
    return ("visible" if mr > 0 else "zero ratio"), mr, float(max(norms))


def global_scan(q1: Metric, q2: Metric, domain: DomainSpec, grid, controls=None, directions=None,
                fan_epsilon: float = 0.05, fan_count: int = 3, N="auto",
                tau_count: int = DEFAULT_TAU_GRID) -> ScanReport:
    """Trace a chord through every grid point in each direction and check a small fan
    around its entry point.

    A point is covered when some tube through it was traced and either sees no
    difference at all or has a positive minimum ratio.
    """
    controls = controls or IntegratorControls()
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    dirs = scan_directions(domain.dim) if directions is None else [np.asarray(d, float) for d in directions]
    tubes, fwd, bwd = [], [], []
    for p in grid:
        for d in dirs:
            tube = TubeRecord(point=p.tolist(), direction=d.tolist(), entry=None, status="untraced")
            tubes.append(tube)
            try:
                eta = aim_covector(q1, p, d)
                fwd.append(InitialData(p, eta, null_covector(q1, p, eta)))
                bwd.append(InitialData(p, -eta, null_covector(q1, p, -eta)))
            except NoForwardRoot:
                tube.status = "no forward root"
                fwd.append(None)
                bwd.append(None)

    live = [i for i, f in enumerate(fwd) if f is not None]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traced = trace_rays(q1, [fwd[i] for i in live] + [bwd[i] for i in live], domain, controls)
    half = len(live)

    inits, owner = [], []
    for j, i in enumerate(live):
        tf, tb = traced[j], traced[half + j]
        tube = tubes[i]
        if not (tf.exited and tb.exited):
            tube.status = "no exit"
            continue
        tube.T_forward, tube.T_backward = float(tf.t[-1]), float(tb.t[-1])
        entry = tb.exit_point
        tube.entry = entry.tolist()
        fan = FanSpec(entry, fan_epsilon, fan_count, "fixed_eta", -tb.xi[-1])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rays = make_fan(domain, q1, fan, controls.dynamics)
        except (EmptyFan, ValueError):
            tube.status = "no rays"
            continue
        inits.extend(rays)
        owner.extend([i] * len(rays))

    owner = np.array(owner, dtype=int)
    if inits:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            records, _, _, keep = _analyze(q1, q2, inits, domain, controls, N, tau_count, owner)
        kept_owner = owner[keep]
        for i in np.unique(kept_owner):
            recs = [r for r, o in zip(records, kept_owner) if o == i]
            tube = tubes[i]
            tube.status, tube.min_ratio, tube.max_norm = _tube_status(recs)
            tube.rays = len(recs)

    per_point = len(dirs)
    covered = []
    for k in range(grid.shape[0]):
        mine = tubes[k * per_point:(k + 1) * per_point]
        covered.append(any(t.status in (VERDICT_IDENTICAL, "visible") for t in mine))
    coverage = float(np.mean(covered)) if covered else 0.0
    return ScanReport(coverage, tubes, grid.tolist(), covered)
