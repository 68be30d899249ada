"""Acceptance criteria, one test per criterion.

Each test appends a ``PASS``/``FAIL`` line to :data:`conftest.ACCEPTANCE_LINES`,
printed in the terminal summary, and then asserts.
"""

import io
import json
import math
import warnings
from pathlib import Path

import numpy as np
import pytest

import conftest
from conftest import chord, scaled_identity
from nullrigidity.cli import run_scenario
from nullrigidity.domain import DomainSpec
from nullrigidity.errors import LeftDomainWarning
from nullrigidity.flow import hamiltonian
from nullrigidity.integrator import (IntegratorControls, geodesic_rhs, grid_layout, integrate_null_geodesic,
                                     integrate_on_grids, pack_inits, trace_interval, trace_rays)
from nullrigidity.length import length_at_tau, timespace_length
from nullrigidity.metric import ConformalBump, Homotopy, Minkowski, Perturbed
from nullrigidity.rigidity import VERDICT_INVISIBLE, stability_check
from nullrigidity.shooting import FanSpec, make_fan
from nullrigidity.variation import integrate_first_variation, length_first_variation, linear_parts

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
DISK = DomainSpec.unit_ball(2)
BUMP = ConformalBump(0.1, [0.0, 0.0], 0.5)


def record(k, ok, detail):
    conftest.ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
    assert ok, detail


def run_config(name, sub, out, **overrides):
    cfg = json.loads((CONFIGS / name).read_text())
    cfg.update(overrides)
    code = run_scenario(cfg, sub, out, stream=io.StringIO())
    return code


def frozen_state(q1, q2, tau, base):
    tr = trace_interval(Homotopy(q1, q2, tau), [base.init], base.t[-1], IntegratorControls(step=base.step))[0]
    assert np.array_equal(tr.t, base.t)
    return tr


# -- 1. conservation -----------------------------------------------------------


def drift_long_double(metric, inits, T, h):
    """max |H - H(0)| per ray for the same RK4 scheme run in extended precision.

    In float64 the drift at h = 1e-3 is already at round-off, so the order of the
    scheme can only be seen with a wider mantissa.
    """
    z0, xi0 = pack_inits(inits)
    z0, xi0 = z0.astype(np.longdouble), xi0.astype(np.longdouble)
    layout = [grid_layout(t, h) for t in T]
    heads = np.array([hd for hd, _ in layout])
    tails = np.array([tl for _, tl in layout])
    S = integrate_on_grids(lambda z: geodesic_rhs(metric, z, xi0, "reduced"), z0, np.longdouble(h), heads, tails)
    n = metric.dim
    out = []
    for r in range(len(inits)):
        nodes = S[: heads[r] + 3, r]
        H = hamiltonian(metric.blocks(nodes[:, :n]), xi0[r], nodes[:, n:2 * n])
        out.append(float(np.max(np.abs(H - H[0]))))
    return np.array(out)


def test_criterion_1_conservation():
    c = IntegratorControls(step=1e-3)
    fan = FanSpec([-1.0, 0.0], 0.6, 9)
    parts, ok = [], True
    for name, q in (("minkowski", Minkowski(2)), ("bump", BUMP)):
        inits = make_fan(DISK, q, fan)
        trajs = trace_rays(q, inits, DISK, c)
        worst = max(t.h_drift_max for t in trajs)
        ok &= worst <= 1e-9 and all(t.exited for t in trajs)
        T = [t.t[-1] for t in trajs[::4]]
        d1 = drift_long_double(q, inits[::4], T, 1e-3)
        d2 = drift_long_double(q, inits[::4], T, 5e-4)
        if np.all(d1 == 0):
            # no truncation error at all: the straight chords are integrated exactly
            ok &= bool(np.all(d2 == 0))
            parts.append(f"{name} max|H|={worst:.1e}, drift exactly 0 at both steps")
        else:
            ratio = float(np.min(d1 / d2))
            ok &= ratio >= 12
            parts.append(f"{name} max|H|={worst:.1e}, halving ratio {ratio:.1f} (extended precision)")
    record(1, ok, "; ".join(parts))


# -- 2. exact chords -----------------------------------------------------------


def test_criterion_2_exact_chords():
    q = Minkowski(2)
    c = IntegratorControls(step=1e-3)
    got = []
    for direction, T_ref, L_ref in (([1.0, 0.0], 2.0, 2 * math.sqrt(2)), ([1.0, 1.0], math.sqrt(2), 2.0)):
        tr = integrate_null_geodesic(q, chord(q, [-1.0, 0.0], direction), DISK, c)
        L = timespace_length(q, tr).L
        got.append((abs(tr.T_exit - T_ref), abs(L - L_ref)))
    ok = all(dT <= 1e-10 and dL <= 1e-8 for dT, dL in got)
    record(2, ok, ", ".join(f"|dT|={dT:.1e} |dL|={dL:.1e}" for dT, dL in got))


# -- 3. first variation oracle -------------------------------------------------


def test_criterion_3_first_variation():
    q1, q2 = Minkowski(2), BUMP
    base = integrate_null_geodesic(q1, chord(q1, [-1.0, 0.0], [1.0, 0.3]), DISK, IntegratorControls(step=1e-3))
    vt = integrate_first_variation(q1, q2, 0.0, base)
    scale = np.max(np.linalg.norm(vt.dx_dtau, axis=1))
    errs = []
    for h in (1e-3, 5e-4):
        fd = (frozen_state(q1, q2, h, base).x - frozen_state(q1, q2, -h, base).x) / (2 * h)
        errs.append(float(np.max(np.linalg.norm(fd - vt.dx_dtau, axis=1)) / scale))
    ratio = errs[0] / errs[1]
    ok = errs[0] <= 1e-4 and abs(ratio - 4) <= 1.0
    record(3, ok, f"relative error {errs[0]:.2e} at h=1e-3, halving ratio {ratio:.2f}")


# -- 4. length variation oracle ------------------------------------------------


def test_criterion_4_length_variation():
    # a strong bump keeps the h^2 term above float64 round-off at h = 1e-4
    q1, q2 = Minkowski(2), ConformalBump(0.5, [0.0, 0.0], 0.5)
    c = IntegratorControls(step=2e-3)
    base = integrate_null_geodesic(q1, chord(q1, [-1.0, 0.0], [1.0, 0.3]), DISK, c)
    l = linear_parts(q1, q2, [base])[0]
    errs = []
    for h in (1e-3, 1e-4):
        Lp, Lm = (length_at_tau(q1, q2, s, base.init, base.t[-1], controls=c).L for s in (h, -h))
        errs.append(abs(l - (Lp - Lm) / (2 * h)))
    ratio = errs[0] / errs[1]
    record(4, abs(ratio - 100) <= 30, f"errors {errs[0]:.2e}, {errs[1]:.2e}, ratio {ratio:.1f}")


# -- 5. closed-form linear part ------------------------------------------------


def test_criterion_5_closed_form():
    q = Minkowski(2)
    eps = 0.1
    base = integrate_null_geodesic(q, chord(q, [-1.0, 0.0], [1.0, 0.0]), DISK, IntegratorControls(step=1e-3))
    lv = length_first_variation(q, scaled_identity(eps), base)
    rel = abs(lv.l_value + math.sqrt(2) * eps) / (math.sqrt(2) * eps)
    ok = rel <= 1e-6 and abs(lv.G2 - 0.0037191) <= 1e-5
    record(5, ok, f"l_value={lv.l_value:.12f} (rel {rel:.1e}), G2={lv.G2:.7f}")


# -- 6. quadratic remainder ----------------------------------------------------

SWEEP = np.logspace(-1, -3, 5)


def _sweep(q1, make_q2, init_fan, N):
    c = IntegratorControls(step=2e-3)
    G2, norm, CN = [], [], []
    for eps in SWEEP:
        # a faster q2 may overshoot the boundary within the frozen q1 interval; that is only flagged
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LeftDomainWarning)
            rep = stability_check(q1, make_q2(eps), init_fan, DISK, c, N=N)
        (ray,) = rep.rays
        G2.append(abs(ray.G2))
        norm.append(ray.norm.total)
        CN.append(rep.estimates["C_N"])
    slope = np.polyfit(np.log(norm), np.log(G2), 1)[0]
    spread = (max(CN) - min(CN)) / min(CN)
    return float(slope), float(spread)


def test_criterion_6_quadratic_remainder():
    direction = ConformalBump(0.3, [0.2, 0.1], 0.4)
    families = {
        "scaled identity": (Minkowski(2), scaled_identity, FanSpec([-1.0, 0.0], 0.0, 1), 5.0),
        "bump": (BUMP, lambda e: Perturbed(BUMP, [direction], [e]),
                 FanSpec([-1.0, 0.0], 0.0, 1, "fixed_eta", eta=[-1.0, 0.2]), "auto"),
    }
    parts, ok = [], True
    for name, (q1, make_q2, fan, N) in families.items():
        slope, spread = _sweep(q1, make_q2, fan, N)
        ok &= slope >= 1.9 and spread <= 0.1
        parts.append(f"{name} slope {slope:.3f}, C_N spread {100 * spread:.1f}%")
    record(6, ok, "; ".join(parts))


# -- 7. stability ratio --------------------------------------------------------


def test_criterion_7_stability_ratio():
    c = IntegratorControls(step=1e-3)
    q1 = Minkowski(2)
    diam = FanSpec([-1.0, 0.0], 0.0, 1)
    const = []
    for eps in (1e-2, 1e-3, 1e-4):
        rep = stability_check(q1, scaled_identity(eps), diam, DISK, c, N=5.0)
        closed = 20 * (math.sqrt(2) - math.sqrt(1 + (1 - eps) ** 2)) / (eps * math.sqrt(2) * (1 - math.exp(-20)))
        const.append((rep.rays[0].ratio, closed))
    ok = abs(const[-1][0] - 10.0) <= 0.1 and all(abs(r - cl) <= 1e-6 * cl for r, cl in const)
    # bump amplitudes on a 32-ray fan
    fan = FanSpec([-1.0, 0.0], 0.5, 32)
    bump_min = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for a in (1e-2, 1e-3):
            bump_min.append(stability_check(q1, ConformalBump(a, [0.2, 0.1], 0.5), fan, DISK, c).min_ratio)
    spread = abs(bump_min[0] - bump_min[1]) / bump_min[1]
    ok &= min(bump_min) > 0 and spread <= 0.1
    record(7, ok, f"constant family ratios {', '.join(f'{r:.5f}' for r, _ in const)}; "
                  f"bump fan min_ratio {bump_min[0]:.4e}, {bump_min[1]:.4e} (spread {100 * spread:.2f}%)")


# -- 8. degenerate visibility --------------------------------------------------


def test_criterion_8_invisible_bump():
    q2 = ConformalBump(0.05, [0.0, 0.75], 0.2, "compact")
    rep = stability_check(Minkowski(2), q2, FanSpec([-1.0, 0.0], 0.3, 8), DISK, IntegratorControls(step=1e-3))
    zero = all(r.norm.total == 0 and r.delta_L == 0 for r in rep.rays)
    ok = zero and len(rep.rays) == 8 and rep.verdict == VERDICT_INVISIBLE
    record(8, ok, f"{len(rep.rays)} rays with zero norm and zero dL: {zero}, verdict '{rep.verdict}'")


# -- 9. linearized recovery ----------------------------------------------------


def test_criterion_9_recovery(tmp_path):
    assert run_config("recover_bumps.json", "recover", tmp_path) == 0
    doc = json.loads((tmp_path / "coefficients.json").read_text())
    got, true = np.array(doc["coefficients"]), np.array(doc["true_coefficients"])
    rel = np.abs(got - true) / np.abs(true)
    ok = len(doc["rays"]) == 64 and bool(np.all(rel <= 0.05))
    record(9, ok, f"{len(doc['rays'])} rays, relative errors {', '.join(f'{r:.2%}' for r in rel)}")


# -- 10. global scan -----------------------------------------------------------


def test_criterion_10_global_scan(tmp_path):
    cfg = json.loads((CONFIGS / "scan_bump.json").read_text())
    same = tmp_path / "same"
    assert run_config("scan_bump.json", "scan", same, metric_q2=cfg["metric_q1"]) in (0, 1)
    ident = json.loads((same / "scan.json").read_text())
    zero = all(t["max_norm"] == 0 and t["status"] == "identical along fan" for t in ident["tubes"])
    ok = ident["coverage"] == 1.0 and zero

    bump = tmp_path / "bump"
    assert run_config("scan_bump.json", "scan", bump) in (0, 1)
    scan = json.loads((bump / "scan.json").read_text())
    center = np.array(cfg["metric_q2"]["params"]["center"])
    sigma = cfg["metric_q2"]["params"]["sigma"]
    hit = []
    for t in scan["tubes"]:
        p, d = np.array(t["point"]) - center, np.array(t["direction"])
        # the central chord is a straight line in the Minkowski background
        if abs(p[0] * d[1] - p[1] * d[0]) < sigma:
            hit.append(t["min_ratio"] is not None and t["min_ratio"] > 0)
    ok &= bool(hit) and all(hit)
    record(10, ok, f"identical coverage {ident['coverage']}, zero norms {zero}; "
                   f"{sum(hit)}/{len(hit)} tubes through the bump support with min_ratio > 0")


# -- 11. determinism -----------------------------------------------------------


def _outputs(path):
    files = {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.name != "manifest.json"}
    manifest = json.loads((path / "manifest.json").read_text())
    manifest.pop("wall_time")
    return files, manifest


@pytest.mark.parametrize("name,sub", [("chord_trace.json", "trace"), ("bump_variation.json", "variation"),
                                      ("rigidity_constant.json", "rigidity")])
def test_criterion_11_determinism(tmp_path, name, sub):
    first, second = tmp_path / "a", tmp_path / "b"
    codes = (run_config(name, sub, first), run_config(name, sub, second))
    same = _outputs(first) == _outputs(second)
    ok = codes[0] == codes[1] == 0 and same
    record(11, ok, f"{sub} on {name}: {len(_outputs(first)[0])} files byte-identical across reruns: {same}")
