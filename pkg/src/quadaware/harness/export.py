"""CSV and JSON writers for episodes, metrics and sweeps."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1

EPISODE_HEADER = (
    ["t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "q_w", "q_x", "q_y", "q_z", "w_x", "w_y", "w_z",
     "T", "tau_x", "tau_y", "tau_z", "ep_norm", "e_norm", "s_aggr"]
    + [f"fhat_{i}" for i in range(6)]
    + ["gate", "rho", "clamped"]
)

SWEEP_HEADER = ["scale", "final_error", "peak_error", "aggressiveness", "feasible", "diverged",
                "Tdot_rms_tr", "taudot_rms_tr", "Tdot_rms_ss", "taudot_rms_ss"]


class ExportError(OSError):
    def __init__(self, path, exc):
        super().__init__(f"cannot write {path}: {exc}")
        self.path = Path(path)


def _fmt(x: float) -> str:
    return repr(float(x))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def episode_rows(result):
    gp = bool(result.meta.get("gp"))
    ep, en = result.ep_norm, result.e_norm
    for k in range(len(result.t)):
        row = [_fmt(result.t[k])]
        row += [_fmt(x) for x in result.states[k]]
        row += [_fmt(x) for x in result.inputs[k]]
        row += [_fmt(ep[k]), _fmt(en[k]), _fmt(result.aggr[k])]
        row += [_fmt(x) for x in result.fhat[k]]
        if gp and np.isfinite(result.gate[k]):
            row += [_fmt(result.gate[k]), _fmt(result.rho[k])]
        else:
            row += ["", ""]
        row.append(str(int(result.clamped[k])))
        yield row


def write_episode_csv(result, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(EPISODE_HEADER)
            w.writerows(episode_rows(result))
    except OSError as exc:
        raise ExportError(path, exc) from exc
    return path


def write_json(payload: dict, path) -> Path:
    """Pretty-printed JSON with a ``schema_version`` field."""
    path = Path(path)
    doc = {"schema_version": SCHEMA_VERSION, **_jsonable(payload)}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ExportError(path, exc) from exc
    return path


def read_json(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return doc


def write_sweep_csv(selection, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_HEADER)
            for r in selection.records:
                m = r.metrics
                w.writerow([_fmt(r.scale), _fmt(r.final_error), _fmt(r.peak_error), _fmt(r.aggressiveness),
                            int(r.feasible), int(r.diverged)]
                           + [_fmt(m.get(k, float("nan"))) for k in SWEEP_HEADER[6:]])
    except OSError as exc:
        raise ExportError(path, exc) from exc
    return path


def export(result, report, out_dir, stem: str = "episode", selection=None) -> dict:
    """Write ``<stem>.csv``, ``<stem>_metrics.json`` and, if given, the sweep files."""
    out = Path(out_dir)
    paths = {"csv": write_episode_csv(result, out / f"{stem}.csv"),
             "metrics": write_json({"metrics": report.to_dict(), "meta": _episode_meta(result)},
                                   out / f"{stem}_metrics.json")}
    if selection is not None:
        paths["sweep"] = write_json({"selection": selection.to_dict()}, out / "sweep.json")
        paths["sweep_csv"] = write_sweep_csv(selection, out / "sweep.csv")
    return paths


def _episode_meta(result) -> dict:
    return {k: v for k, v in result.meta.items() if k != "gate_online"}
