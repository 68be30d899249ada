"""Batch command line front end.

Usage::

    nullrigidity {trace,length,variation,rigidity,recover,scan} --config run.json
                 [--out DIR] [--workers K] [--seed S]

Exit codes: 0 success, 1 success with warnings, 2 configuration error,
3 numerical failure on every ray.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import DomainSpec
from .errors import ConfigError, EmptyFan, NullRigidityError, NullRigidityWarning
from .integrator import IntegratorControls, trace_interval, trace_rays
from .io import emit_report, write_csv, write_json, write_manifest
from .length import lengths_of
from .metric import Homotopy, Metric, metric_from_config, validate_signature
from .rigidity import (DEFAULT_TAU_GRID, PerturbationBasis, _analyze, global_scan, linearized_recover,
                       scan_directions, scan_grid, select_weight_N, summarize, synthetic_data)
from .shooting import FanSpec, fan_from_config, make_fan
from .flow import hamiltonian
from .variation import length_variations, variations

SUBCOMMANDS = ("trace", "length", "variation", "rigidity", "recover", "scan")
NEEDS_FAN = ("trace", "length", "variation", "rigidity", "recover")
NEEDS_Q2 = ("variation", "rigidity", "scan")

EXIT_OK, EXIT_WARN, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class AllRaysFailed(NullRigidityError):
    pass


@dataclass
class Scenario:
    metric_q1: Metric
    domain: DomainSpec
    metric_q2: Optional[Metric] = None
    fan: Optional[FanSpec] = None
    integrator: IntegratorControls = field(default_factory=IntegratorControls)
    rigidity: dict = field(default_factory=dict)
    output: Optional[str] = None
    seed: int = 0
    basis: Optional[dict] = None
    scan: dict = field(default_factory=dict)
    length: dict = field(default_factory=dict)
    variation: dict = field(default_factory=dict)

    def to_config(self) -> dict:
        cfg = {
            "metric_q1": self.metric_q1.to_config(),
            "domain": self.domain.to_config(),
            "integrator": self.integrator.to_config(),
            "rigidity": dict(self.rigidity),
            "seed": int(self.seed),
            "scan": dict(self.scan),
            "length": dict(self.length),
            "variation": dict(self.variation),
        }
        if self.metric_q2 is not None:
            cfg["metric_q2"] = self.metric_q2.to_config()
        if self.fan is not None:
            cfg["fan"] = {"y0": self.fan.y0.tolist(), "epsilon": self.fan.epsilon,
                          "count": self.fan.count, "direction_rule": self.fan.direction_rule}
            if self.fan.eta is not None:
                cfg["fan"]["eta"] = self.fan.eta.tolist()
        if self.output is not None:
            cfg["output"] = self.output
        if self.basis is not None:
            cfg["basis"] = self.basis
        return cfg


def _section(cfg, key, build):
    try:
        return build(cfg[key])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, NullRigidityError) as exc:
        raise ConfigError(key, f"invalid '{key}' block: {exc}") from exc


def parse_scenario(cfg: dict, subcommand: Optional[str] = None) -> Scenario:
    """Validate a scenario config; errors name the offending key."""
    if not isinstance(cfg, dict):
        raise ConfigError("config", "scenario config must be a JSON object")
    required = ["metric_q1", "domain"]
    if subcommand in NEEDS_FAN:
        required.append("fan")
    if subcommand in NEEDS_Q2:
        required.append("metric_q2")
    if subcommand == "recover":
        required.append("basis")
    for key in required:
        if key not in cfg:
            raise ConfigError(key, f"missing required key '{key}'")
    domain = _section(cfg, "domain", DomainSpec.from_config)
    q1 = _section(cfg, "metric_q1", lambda c: metric_from_config(c, domain.dim))
    if q1.dim != domain.dim:
        raise ConfigError("metric_q1", f"metric dim {q1.dim} does not match domain dim {domain.dim}")
    sc = Scenario(metric_q1=q1, domain=domain)
    if "metric_q2" in cfg:
        sc.metric_q2 = _section(cfg, "metric_q2", lambda c: metric_from_config(c, domain.dim))
        if sc.metric_q2.dim != domain.dim:
            raise ConfigError("metric_q2", "metric dim does not match domain dim")
    if "fan" in cfg:
        sc.fan = _section(cfg, "fan", lambda c: fan_from_config(c, domain))
    if "integrator" in cfg:
        sc.integrator = _section(cfg, "integrator", IntegratorControls.from_config)
    rig = dict(cfg.get("rigidity", {}))
    N = rig.get("N", "auto")
    if not (N == "auto" or (isinstance(N, (int, float)) and N > 0)):
        raise ConfigError("rigidity", "rigidity.N must be a positive number or \"auto\"")
    rig.setdefault("N", "auto")
    rig.setdefault("tau_grid", DEFAULT_TAU_GRID)
    if not (isinstance(rig["tau_grid"], int) and rig["tau_grid"] >= 1):
        raise ConfigError("rigidity", "rigidity.tau_grid must be a positive integer")
    sc.rigidity = rig
    sc.output = cfg.get("output")
    seed = cfg.get("seed", 0)
    if not (isinstance(seed, int) and seed >= 0):
        raise ConfigError("seed", "seed must be a non-negative integer")
    sc.seed = seed
    if "basis" in cfg:
        b = cfg["basis"]
        if not isinstance(b, dict) or not b.get("members"):
            raise ConfigError("basis", "basis needs a non-empty 'members' list")
        _section(b, "members", lambda ms: [metric_from_config(m, domain.dim) for m in ms])
        if "observed_delta_L" not in b and "coefficients" not in b:
            raise ConfigError("basis", "basis needs 'coefficients' (synthetic data) or 'observed_delta_L'")
        sc.basis = b
    sc.scan = dict(cfg.get("scan", {}))
    sc.length = dict(cfg.get("length", {}))
    sc.variation = dict(cfg.get("variation", {}))
    return sc


# -- work items ----------------------------------------------------------------


def _captured(fn, *args):
    """Run ``fn`` and return (result, warning messages)."""
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        result = fn(*args)
    return result, [f"{w.category.__name__}: {w.message}" for w in rec]


def _chunks(items, k):
    k = max(1, min(k, len(items)))
    bounds = np.linspace(0, len(items), k + 1).astype(int)
    return [(int(a), items[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def _map_rays(fn, inits, workers, *args):
    """Apply ``fn(offset, inits_chunk, *args)`` over contiguous chunks, in order."""
    parts = _chunks(inits, workers)
    if workers <= 1 or len(parts) == 1:
        results = [_captured(fn, off, chunk, *args) for off, chunk in parts]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_captured, fn, off, chunk, *args) for off, chunk in parts]
            results = [f.result() for f in futures]
    out, msgs = [], []
    for res, ws in results:
        out.extend(res)
        msgs.extend(ws)
    for m in msgs:
        warnings.warn(m, NullRigidityWarning, stacklevel=2)
    return out


def _trace_chunk(offset, inits, q1, domain, controls):
    return trace_rays(q1, inits, domain, controls)


def _variation_chunk(offset, inits, q1, q2, domain, controls, tau, second):
    base = trace_rays(q1, inits, domain, controls)
    keep = [i for i, b in enumerate(base) if b.exited]
    base = [base[i] for i in keep]
    if not base:
        return []
    firsts, _ = variations(q1, q2, tau, base, second=second)
    lvs = length_variations(q1, q2, base, None if tau != 0.0 else firsts, controls=controls)
    return [(offset + keep[j], vt, lv) for j, (vt, lv) in enumerate(zip(firsts, lvs))]


def _rigidity_chunk(offset, inits, q1, q2, domain, controls, N, tau_grid):
    records, _, skipped, _ = _analyze(q1, q2, inits, domain, controls, N, tau_grid)
    for r in records:
        r.ray += offset
    return [("record", r) for r in records] + [("skip", (offset + i, why)) for i, why in skipped]


# -- subcommands ---------------------------------------------------------------


def _fan(sc: Scenario):
    try:
        return make_fan(sc.domain, sc.metric_q1, sc.fan, sc.integrator.dynamics)
    except EmptyFan as exc:
        raise AllRaysFailed(str(exc)) from exc


def _require_exits(trajs):
    if not trajs or not any(t.exited for t in trajs):
        raise AllRaysFailed("no ray reached the boundary")


def _traj_rows(q, tr):
    b = q.blocks(tr.x)
    H = hamiltonian(b, tr.xi0, tr.xi)
    return [[tr.t[i], tr.x0[i], *tr.x[i], tr.xi0, *tr.xi[i], H[i]] for i in range(tr.t.size)]


def cmd_trace(sc, out, workers):
    inits = _fan(sc)
    trajs = _map_rays(_trace_chunk, inits, workers, sc.metric_q1, sc.domain, sc.integrator)
    _require_exits(trajs)
    n = sc.domain.dim
    header = ["t", "x0"] + [f"x{i + 1}" for i in range(n)] + ["xi0"] + [f"xi{i + 1}" for i in range(n)] + ["H"]
    paths = []
    for r, tr in enumerate(trajs):
        paths.append(write_csv(out / f"trajectory_{r:03d}.csv", header, _traj_rows(sc.metric_q1, tr)))
        side = {"ray_index": r, "status": tr.status, "T_exit": tr.T_exit, "exit_point": tr.exit_point,
                "exit_grazing": tr.exit_grazing, "h_drift_max": tr.h_drift_max,
                "left_domain": tr.left_domain, "y": tr.init.y, "eta": tr.init.eta,
                "eta0": tr.init.eta0, "step": tr.step, "dynamics": tr.dynamics}
        paths.append(write_json(out / f"trajectory_{r:03d}.json", side))
    return paths


LENGTH_COLUMNS = ("ray_index", "tau", "T_used", "L", "frozen_T", "error_estimate")


def cmd_length(sc, out, workers):
    inits = _fan(sc)
    trajs = _map_rays(_trace_chunk, inits, workers, sc.metric_q1, sc.domain, sc.integrator)
    _require_exits(trajs)
    rows = [[r, 0.0, rec.T_used, rec.L, rec.frozen_T, rec.quadrature_error_estimate]
            for r, rec in enumerate(lengths_of(sc.metric_q1, trajs))]
    taus = [float(t) for t in sc.length.get("taus", []) if float(t) != 0.0]
    if taus and sc.metric_q2 is None:
        raise ConfigError("length", "length.taus needs metric_q2")
    for tau in taus:
        metric = Homotopy(sc.metric_q1, sc.metric_q2, tau)
        frozen = trace_interval(metric, inits, [t.t[-1] for t in trajs], sc.integrator, sc.domain)
        for r, rec in enumerate(lengths_of(metric, frozen)):
            if rec.left_domain:
                warnings.warn(f"ray {r} leaves the domain at tau={tau}", NullRigidityWarning)
            rows.append([r, tau, rec.T_used, rec.L, rec.frozen_T, rec.quadrature_error_estimate])
    return [write_csv(out / "lengths.csv", LENGTH_COLUMNS, rows)]


def cmd_variation(sc, out, workers):
    inits = _fan(sc)
    tau = float(sc.variation.get("tau", 0.0))
    second = bool(sc.variation.get("second", False))
    res = _map_rays(_variation_chunk, inits, workers, sc.metric_q1, sc.metric_q2, sc.domain,
                    sc.integrator, tau, second)
    if not res:
        raise AllRaysFailed("no ray reached the boundary")
    n = sc.domain.dim
    header = (["t"] + [f"dx{i + 1}" for i in range(n)] + [f"dxi{i + 1}" for i in range(n)] + ["dx0"])
    if second:
        header += [f"d2x{i + 1}" for i in range(n)] + [f"d2xi{i + 1}" for i in range(n)]
    paths, lrows, vrows = [], [], []
    for r, vt, lv in res:
        cols = [vt.t[:, None], vt.dx_dtau, vt.dxi_dtau, vt.dx0_dtau[:, None]]
        if second:
            cols += [vt.d2x_dtau2, vt.d2xi_dtau2]
        paths.append(write_csv(out / f"variation_{r:03d}.csv", header, np.hstack(cols).tolist()))
        lrows.append([r, 0.0, vt.t[-1], lv.L1, False, float("nan")])
        vrows.append([r, tau, vt.t[-1], lv.L1, lv.L2, lv.L2 - lv.L1, lv.l_value, lv.G2])
    paths.append(write_csv(out / "lengths.csv", LENGTH_COLUMNS, lrows))
    paths.append(write_csv(out / "length_variation.csv",
                           ("ray_index", "tau", "T_used", "L1", "L2", "delta_L", "l_value", "G2"), vrows))
    return paths


def cmd_rigidity(sc, out, workers):
    inits = _fan(sc)
    N, tau_grid = sc.rigidity["N"], sc.rigidity["tau_grid"]
    if N == "auto" and workers > 1:
        base = trace_rays(sc.metric_q1, inits, sc.domain, sc.integrator)
        N = max(select_weight_N(sc.metric_q1, b) for b in base if b.exited)
    res = _map_rays(_rigidity_chunk, inits, workers, sc.metric_q1, sc.metric_q2, sc.domain,
                    sc.integrator, N, tau_grid)
    records = [v for kind, v in res if kind == "record"]
    skipped = [v for kind, v in res if kind == "skip"]
    if not records:
        raise AllRaysFailed("no ray reached the boundary")
    N_used = float(N) if N != "auto" else max(r.norm.N_used for r in records)
    report = summarize(records, N_used, sc.metric_q1, sc.metric_q2, sc.domain, skipped, sc.seed)
    return emit_report(report, out)


def cmd_recover(sc, out, workers):
    inits = _fan(sc)
    b = sc.basis
    members = [metric_from_config(m, sc.domain.dim) for m in b["members"]]
    basis = PerturbationBasis(members, np.asarray(b["coefficients"], float) if "coefficients" in b else None)
    base = trace_rays(sc.metric_q1, inits, sc.domain, sc.integrator)
    keep = [i for i, t in enumerate(base) if t.exited]
    if not keep:
        raise AllRaysFailed("no ray reached the boundary")
    base = [base[i] for i in keep]
    if "observed_delta_L" in b:
        obs = np.asarray(b["observed_delta_L"], dtype=float)
        if obs.shape != (len(inits),):
            raise ConfigError("basis", f"observed_delta_L needs {len(inits)} values, one per fan ray")
        obs = obs[keep]
    else:
        # synthetic data from an independent discretization
        data_controls = sc.integrator.with_step(float(b.get("data_step", sc.integrator.step / 2)))
        obs = synthetic_data(sc.metric_q1, basis.metric(sc.metric_q1), [inits[i] for i in keep],
                             sc.domain, data_controls)
    res = linearized_recover(sc.metric_q1, basis, base, obs, b.get("reg", sc.rigidity.get("reg")))
    doc = {"coefficients": res.coefficients, "residual": res.residual, "condition": res.condition,
           "reg": res.reg, "rays": keep, "observed_delta_L": obs}
    if basis.coefficients is not None:
        doc["true_coefficients"] = basis.coefficients
    return [write_json(out / "coefficients.json", doc)]


def cmd_scan(sc, out, workers):
    g = sc.scan.get("grid", {})
    try:
        grid = (np.asarray(g["points"], dtype=float) if "points" in g else
                scan_grid(sc.domain, int(g.get("count", 5)), g.get("kind", "uniform"), sc.seed))
    except (ValueError, TypeError) as exc:
        raise ConfigError("scan", f"invalid scan grid: {exc}") from exc
    dirs = sc.scan.get("directions")
    dirs = scan_directions(sc.domain.dim, dirs) if dirs is None or isinstance(dirs, int) else dirs
    report = global_scan(sc.metric_q1, sc.metric_q2, sc.domain, grid, sc.integrator, dirs,
                         float(sc.scan.get("fan_epsilon", 0.05)), int(sc.scan.get("fan_count", 3)),
                         sc.rigidity["N"], sc.rigidity["tau_grid"])
    return [write_json(out / "scan.json", report)]


COMMANDS = {"trace": cmd_trace, "length": cmd_length, "variation": cmd_variation,
            "rigidity": cmd_rigidity, "recover": cmd_recover, "scan": cmd_scan}


def run_scenario(cfg: dict, subcommand: str, out=None, workers: int = 1, seed: Optional[int] = None,
                 stream=None) -> int:
    """Run one subcommand on a config dictionary; returns the exit status."""
    stream = stream if stream is not None else sys.stderr
    t_start = time.perf_counter()
    try:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError("subcommand", f"unknown subcommand '{subcommand}'")
        if seed is not None:
            cfg = dict(cfg, seed=int(seed))
        sc = parse_scenario(cfg, subcommand)
        out = out if out is not None else sc.output
        if out is None:
            raise ConfigError("output", "no output directory (use --out or the 'output' key)")
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for key, q in (("metric_q1", sc.metric_q1), ("metric_q2", sc.metric_q2)):
            if q is not None:
                rep = validate_signature(q, sc.domain, seed=sc.seed)
                if not rep.passed:
                    raise ConfigError(key, f"signature check failed at x={list(rep.first_failure)}: {rep.reason}")
    except ConfigError as exc:
        print(f"config error [{exc.key}]: {exc}", file=stream)
        return EXIT_CONFIG

    timings = {"setup": time.perf_counter() - t_start}
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        t0 = time.perf_counter()
        try:
            paths = COMMANDS[subcommand](sc, out, workers)
            code = EXIT_OK
        except ConfigError as exc:
            print(f"config error [{exc.key}]: {exc}", file=stream)
            return EXIT_CONFIG
        except AllRaysFailed as exc:
            print(f"numerical failure: {exc}", file=stream)
            paths, code = [], EXIT_NUMERIC
        timings[subcommand] = time.perf_counter() - t0
    seen = [f"{w.category.__name__}: {w.message}" for w in rec]
    for m in seen:
        print(f"warning: {m}", file=stream)
    if code == EXIT_OK and seen:
        code = EXIT_WARN
    write_manifest(out, paths, cfg, subcommand, sc.seed, workers, timings, seen, code)
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="nullrigidity",
                                description="Null-geodesic lengths, variations and rigidity checks.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", help="output directory (overrides the config's 'output')")
    p.add_argument("--workers", type=int, default=1, help="worker processes over ray chunks")
    p.add_argument("--seed", type=int, help="override the config seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error [config]: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("config error [workers]: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return run_scenario(cfg, args.subcommand, args.out, args.workers, args.seed)


if __name__ == "__main__":
    sys.exit(main())
