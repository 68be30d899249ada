"""Deterministic CSV/JSON writers and the run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from . import __version__


def format_float(x: float) -> str:
    """17 significant digits in scientific notation; non-finite values become ``null``."""
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".16e")


def plain(obj):
    """Convert dataclasses and numpy values to JSON-compatible Python objects."""
    if is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj, indent: int = 1) -> str:
    """JSON text with sorted keys and fixed float formatting."""
    return _encode(plain(obj), 0, indent) + "\n"


def _encode(obj, level, indent):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return _quote(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_quote(k)}: {_encode(obj[k], level + 1, indent)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        items = [pad + _encode(v, level + 1, indent) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _quote(s):
    return json.dumps(s, ensure_ascii=False)


def write_json(path, obj):
    path = Path(path)
    try:
        path.write_text(dumps(obj), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        s = format_float(v)
        return "" if s == "null" else s
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def file_entry(path, root):
    data = Path(path).read_bytes()
    return {"path": os.path.relpath(path, root), "size": len(data),
            "sha256": hashlib.sha256(data).hexdigest()}


def config_hash(cfg) -> str:
    return hashlib.sha256(dumps(cfg).encode("utf-8")).hexdigest()


RAY_COLUMNS = ("ray", "T", "L1", "L2", "delta_L", "l_value", "G2", "norm_total", "term_qprime",
               "term_dqprime", "term_timerow", "N_used", "ratio", "chain_holds")


def emit_report(report, out_dir):
    """Write ``report.json`` and its per-ray CSV mirror ``rays.csv``; returns the paths."""
    out_dir = Path(out_dir)
    doc = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    p_json = write_json(out_dir / "report.json", doc)
    rows = []
    for r in doc.get("rays", []):
        nb = r["norm"]
        rows.append([r["ray"], r["T"], r["L1"], r["L2"], r["delta_L"], r["l_value"], r["G2"],
                     nb["total"], nb["term_qprime"], nb["term_dqprime"], nb["term_timerow"],
                     nb["N_used"], r["ratio"], r["chain_holds"]])
    p_csv = write_csv(out_dir / "rays.csv", RAY_COLUMNS, rows)
    return [p_json, p_csv]


def write_manifest(out_dir, paths, cfg, subcommand, seed, workers, timings, warnings_seen,
                   exit_code):
    out_dir = Path(out_dir)
    manifest = {
        "tool": "nullrigidity",
        "version": __version__,
        "subcommand": subcommand,
        "config_sha256": config_hash(cfg),
        "seed": int(seed),
        "workers": int(workers),
        "wall_time": {k: float(v) for k, v in timings.items()},
        "files": [file_entry(p, out_dir) for p in sorted(set(map(str, paths)))],
        "warnings": list(warnings_seen),
        "exit_code": int(exit_code),
    }
    return write_json(out_dir / "manifest.json", manifest)
