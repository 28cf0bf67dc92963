"""Report files: versioned JSON, CSV tables and plot-data export."""
from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
import platform
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_VERSION = "bvlab.report/1"

ENERGY_COLUMNS = ["eps", "eta", "abs_log_eps", "dirichlet", "penalty", "anchoring", "total"]
TRACE_COLUMNS = ["t", "arc", "u_nu", "u_tau", "phase", "relative_phase"]
PAIRING_COLUMNS = ["zeta", "global", "interior", "boundary"]


def versions() -> dict:
    import matplotlib
    import scipy

    return {"bvlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": platform.python_version()}


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become strings so the output stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()


def build_report(command: str, cfg, results: dict, assertions: list, status: str) -> dict:
    return {"schema": SCHEMA_VERSION, "command": command, "created": timestamp(), "config": cfg.data,
            "config_hash": cfg.hash(), "versions": versions(), "status": status, "assertions": assertions,
            "results": results}


def write_json(obj, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dumps(obj))
    return p


def write_csv(path, columns, rows) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return p


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def energy_rows(records) -> list:
    rows = []
    for r in records:
        e = r["energy"]
        rows.append({"eps": r["eps"], "eta": r.get("eta"), "abs_log_eps": abs(math.log(r["eps"])), **e})
    return rows


def boundary_trace(u) -> dict:
    """Boundary samples of a field: arc position, normal/tangential parts, phase and phase minus tangent lifting."""
    from .jacobian import boundary_relative_phase

    d = u.domain
    ub = u.values[d.boundary]
    tau = np.stack([-d.normal[:, 1], d.normal[:, 0]], axis=1)
    try:
        rel = boundary_relative_phase(u)[0]
    except ValueError:
        rel = np.full(len(ub), np.nan)
    return {"t": d.theta, "arc": d.arc, "u_nu": np.einsum("ij,ij->i", ub, d.normal),
            "u_tau": np.einsum("ij,ij->i", ub, tau), "phase": np.arctan2(ub[:, 1], ub[:, 0]),
            "relative_phase": rel}


def trace_rows(trace: dict) -> list:
    n = len(trace["t"])
    return [{c: float(trace[c][i]) for c in TRACE_COLUMNS} for i in range(n)]


def load_report(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"report not found: {p}")
    text = p.read_text().strip()
    return json.loads(text) if text else {}


def export_plotdata(report_path, out_dir=None, plots: bool = True) -> list[Path]:
    """CSV series (and static figures) from a report: energies, pairings, boundary phase, vortex positions."""
    rep = load_report(report_path)
    out = Path(out_dir) if out_dir is not None else Path(report_path).parent
    out.mkdir(parents=True, exist_ok=True)
    res = rep.get("results", {}) or {}
    written = []

    records = res.get("records", [])
    rows = energy_rows(records)
    written.append(write_csv(out / "energy_vs_logeps.csv", ENERGY_COLUMNS, rows))
    vrows = []
    for r in records:
        vs = r.get("vortices") or {}
        for k, (p, d) in enumerate(zip(vs.get("positions", []), vs.get("degrees", []))):
            vrows.append({"eps": r["eps"], "index": k, "position": p, "degree": d})
    written.append(write_csv(out / "vortex_positions.csv", ["eps", "index", "position", "degree"], vrows))

    pair_rows = []
    for case in res.get("cases", []):
        for row in case.get("pairings", []):
            pair_rows.append({"case": case.get("eps", case.get("n_r")), **row})
    if pair_rows or rep.get("command") == "jacobian":
        written.append(write_csv(out / "pairings.csv", ["case"] + PAIRING_COLUMNS, pair_rows))

    trace = res.get("boundary_trace")
    if trace:
        written.append(write_csv(out / "boundary_phase.csv", TRACE_COLUMNS, trace_rows(trace)))

    if plots and rows:
        from .plotting import plot_energy_vs_logeps

        fit = res.get("fit")
        pred = res.get("prediction")
        written += plot_energy_vs_logeps(rows, out / "energy_vs_logeps",
                                         fit=(fit["A"], fit["B"]) if fit else None,
                                         prediction=_pair(pred))
    if plots and trace:
        from .plotting import plot_boundary_phase

        last = records[-1].get("vortices") if records else None
        written += plot_boundary_phase(trace, out / "boundary_phase", vortices=last)
    return written


def _pair(pred):
    if not pred:
        return None
    try:
        return float(pred["A"]), float(pred["B"])
    except (TypeError, ValueError, KeyError):
        return None
