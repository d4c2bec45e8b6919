"""Persisted documents: maps and reports as JSON, predictions and tables as CSV.

Floats are written with ``repr`` (JSON does this natively), so every document
reads back bit-exactly. Undefined scores are stored as JSON ``null`` or an
empty CSV field.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatVersionError, InvalidArgumentError, ParseError
from .evaluation import AGGREGATIONS, EvalReport, HorizonRecord
from .mapping import CellModel, CliffMap, GridSpec, KlHeatmap
from .motion import SWGMM, SemiWrappedComponent, State
from .predictor import PredictedTrajectory

MAP_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1
HEATMAP_FORMAT_VERSION = 1
SUPPORTED_MAP_VERSIONS = (MAP_FORMAT_VERSION,)
SUPPORTED_REPORT_VERSIONS = (REPORT_FORMAT_VERSION,)

PREDICTION_HEADER = ("trajectory_id", "sample_index", "step", "t_seconds", "x", "y", "rho", "theta", "truncated_flag")
TABLE_HEADER = (
    "method", "aggregation", "axis", "axis_value", "horizon_s",
    "ade_mean", "ade_std", "fde_mean", "fde_std", "n", "success_ratio",
)


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=1, allow_nan=False) + "\n"


def _load(text: str, what: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed {what} document: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{what} document must be a JSON object")
    return doc


def _check_version(doc: dict, supported: tuple[int, ...], what: str) -> None:
    v = doc.get("format_version")
    if v not in supported:
        raise FormatVersionError(
            f"unsupported {what} format_version {v!r}; supported: {', '.join(map(str, supported))}"
        )


def _write_text(text: str, dest) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        dest.write(text)


def _read_text(source) -> str:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return fh.read()
    return source.read()


def _nan_to_none(v: float):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def _none_to_nan(v) -> float:
    return math.nan if v is None else float(v)


# ----------------------------------------------------------------------- map


def grid_to_dict(g: GridSpec) -> dict:
    return {"origin_x": g.origin_x, "origin_y": g.origin_y, "resolution": g.resolution, "width": g.width, "height": g.height}


def grid_from_dict(d: dict) -> GridSpec:
    try:
        return GridSpec(float(d["origin_x"]), float(d["origin_y"]), float(d["resolution"]), int(d["width"]), int(d["height"]))
    except (KeyError, TypeError, ValueError, InvalidArgumentError) as exc:
        raise ParseError(f"bad grid: {exc}") from None


def map_to_dict(m: CliffMap) -> dict:
    cells = []
    for (ix, iy), cell in m.cells.items():
        comps = []
        for c in cell.mixture.components:
            comps.append(
                {"weight": c.weight, "mean_theta": c.mean_theta, "mean_rho": c.mean_rho, "cov": list(c.cov_upper)}
            )
        cells.append({"ix": ix, "iy": iy, "observation_count": cell.observation_count, "components": comps})
    return {"format_version": MAP_FORMAT_VERSION, "grid": grid_to_dict(m.grid), "cells": cells}


def map_from_dict(doc: dict) -> CliffMap:
    _check_version(doc, SUPPORTED_MAP_VERSIONS, "map")
    grid = grid_from_dict(doc.get("grid") or {})
    cells = {}
    for n, c in enumerate(doc.get("cells", [])):
        try:
            comps = []
            for comp in c["components"]:
                ctt, ctr, crr = (float(v) for v in comp["cov"])
                comps.append(
                    SemiWrappedComponent(
                        float(comp["weight"]), float(comp["mean_theta"]), float(comp["mean_rho"]),
                        np.array([[ctt, ctr], [ctr, crr]]),
                    )
                )
            key = (int(c["ix"]), int(c["iy"]))
            if key in cells:
                raise ValueError(f"duplicate cell {key}")
            cells[key] = CellModel(SWGMM(tuple(comps)), int(c["observation_count"]))
        except (KeyError, TypeError, ValueError, ArithmeticError) as exc:
            raise ParseError(f"bad cell entry #{n}: {exc}") from None
    try:
        return CliffMap(grid, cells)
    except InvalidArgumentError as exc:
        raise ParseError(str(exc)) from None


def dumps_map(m: CliffMap) -> str:
    return _dump(map_to_dict(m))


def loads_map(text: str) -> CliffMap:
    return map_from_dict(_load(text, "map"))


def write_map(m: CliffMap, dest) -> None:
    _write_text(dumps_map(m), dest)


def read_map(source) -> CliffMap:
    return loads_map(_read_text(source))


# --------------------------------------------------------------- predictions


@dataclass(frozen=True)
class PredictionRecord:
    """One predicted sample for one trajectory, with its starting state."""

    trajectory_id: str
    sample_index: int
    start: State
    prediction: PredictedTrajectory
    t0: float = 0.0
    delta_t: float = field(default=1.0, compare=False)


def prediction_rows(rec: PredictionRecord) -> list[tuple]:
    flag = int(rec.prediction.truncated)
    s = rec.start
    rows = [(rec.trajectory_id, rec.sample_index, 0, rec.t0, s.x, s.y, s.rho, s.theta, flag)]
    for i, st in enumerate(rec.prediction.states, start=1):
        rows.append((rec.trajectory_id, rec.sample_index, i, rec.t0 + i * rec.delta_t, st.x, st.y, st.rho, st.theta, flag))
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_predictions(records, dest) -> None:
    """Rows per (trajectory, sample): step 0 is the starting state, steps 1.. the prediction."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for rec in records:
        for row in prediction_rows(rec):
            w.writerow([_fmt(v) for v in row])
    _write_text(buf.getvalue(), dest)


def read_predictions(source) -> list[PredictionRecord]:
    reader = csv.reader(io.StringIO(_read_text(source)))
    header = next(reader, None)
    if header is None or tuple(header) != PREDICTION_HEADER:
        raise ParseError(f"bad prediction header {header!r}")
    groups: dict[tuple[str, int], list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(PREDICTION_HEADER):
            raise ParseError(f"line {lineno}: expected {len(PREDICTION_HEADER)} fields")
        try:
            key = (row[0], int(row[1]))
            vals = (int(row[2]), float(row[3]), float(row[4]), float(row[5]), float(row[6]), float(row[7]), int(row[8]))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        groups.setdefault(key, []).append(vals)
    out = []
    for (tid, si), rows in groups.items():
        rows.sort(key=lambda r: r[0])
        if rows[0][0] != 0 or [r[0] for r in rows] != list(range(len(rows))):
            raise ParseError(f"trajectory {tid} sample {si}: steps must run 0..n without gaps")
        flag = bool(rows[0][6])
        try:
            start = State(rows[0][2], rows[0][3], rows[0][4], rows[0][5])
            states = tuple(State(r[2], r[3], r[4], r[5]) for r in rows[1:])
        except InvalidArgumentError as exc:
            raise ParseError(f"trajectory {tid} sample {si}: {exc}") from None
        pred = PredictedTrajectory(states, flag, len(states) + 1 if flag else None)
        dt = rows[1][1] - rows[0][1] if len(rows) > 1 else 1.0
        out.append(PredictionRecord(tid, si, start, pred, rows[0][1], dt))
    return out


# ------------------------------------------------------------------- reports


def report_to_dict(rep: EvalReport) -> dict:
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "method": rep.method,
        "aggregation": rep.aggregation,
        "axis": rep.axis,
        "axis_value": rep.axis_value,
        "n_evaluated": rep.n_evaluated,
        "n_skipped": rep.n_skipped,
        "extra": rep.extra,
        "tables": {
            agg: [{k: _nan_to_none(v) for k, v in vars(r).items()} for r in recs] for agg, recs in rep.tables.items()
        },
    }


def report_from_dict(doc: dict) -> EvalReport:
    _check_version(doc, SUPPORTED_REPORT_VERSIONS, "report")
    try:
        tables = {}
        for agg, recs in doc["tables"].items():
            if agg not in AGGREGATIONS:
                raise ValueError(f"unknown aggregation {agg!r}")
            tables[agg] = [
                HorizonRecord(
                    float(r["horizon_s"]),
                    _none_to_nan(r["ade_mean"]), _none_to_nan(r["ade_std"]),
                    _none_to_nan(r["fde_mean"]), _none_to_nan(r["fde_std"]),
                    int(r["n_trajectories"]), _none_to_nan(r["success_ratio"]), int(r.get("n_undefined", 0)),
                )
                for r in recs
            ]
        return EvalReport(
            doc["method"], doc["aggregation"], tables, int(doc.get("n_evaluated", 0)), int(doc.get("n_skipped", 0)),
            doc.get("axis"), doc.get("axis_value"), dict(doc.get("extra") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad report document: {exc}") from None


def dumps_reports(reports) -> str:
    """A single report as an object, several as ``{"format_version", "reports": [...]}``."""
    if isinstance(reports, EvalReport):
        return _dump(report_to_dict(reports))
    return _dump({"format_version": REPORT_FORMAT_VERSION, "reports": [report_to_dict(r) for r in reports]})


def loads_reports(text: str) -> list[EvalReport]:
    doc = _load(text, "report")
    _check_version(doc, SUPPORTED_REPORT_VERSIONS, "report")
    if "reports" in doc:
        return [report_from_dict(d) for d in doc["reports"]]
    return [report_from_dict(doc)]


def write_reports(reports, dest) -> None:
    _write_text(dumps_reports(reports), dest)


def read_reports(source) -> list[EvalReport]:
    return loads_reports(_read_text(source))


def write_table(reports, dest) -> None:
    """Flat delimiter-separated table, one row per (method, aggregation, axis value, horizon)."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for rep in reports:
        for row in rep.rows():
            w.writerow([_fmt(row[h]) for h in TABLE_HEADER])
    _write_text(buf.getvalue(), dest)


# ------------------------------------------------------------------- heatmap


def heatmap_to_dict(h: KlHeatmap, meta: dict | None = None) -> dict:
    return {
        "format_version": HEATMAP_FORMAT_VERSION,
        "grid": grid_to_dict(h.grid),
        "units": "nats",
        "layout": "values[iy][ix], null marks cells absent from either map",
        "values": [[_nan_to_none(float(v)) for v in row] for row in h.values],
        "mean": _nan_to_none(h.mean()),
        "defined_cells": int(h.defined.sum()),
        **({"meta": meta} if meta else {}),
    }


def heatmap_from_dict(doc: dict) -> KlHeatmap:
    _check_version(doc, (HEATMAP_FORMAT_VERSION,), "heatmap")
    grid = grid_from_dict(doc.get("grid") or {})
    try:
        vals = np.array([[_none_to_nan(v) for v in row] for row in doc["values"]], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad heatmap values: {exc}") from None
    if vals.shape != (grid.height, grid.width):
        raise ParseError(f"heatmap shape {vals.shape} does not match grid {grid.height}x{grid.width}")
    return KlHeatmap(grid, vals)


def write_heatmap(h: KlHeatmap, dest, meta: dict | None = None) -> None:
    _write_text(_dump(heatmap_to_dict(h, meta)), dest)


def read_heatmap(source) -> KlHeatmap:
    return heatmap_from_dict(_load(_read_text(source), "heatmap"))


def write_heatmap_table(h: KlHeatmap, dest) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("ix", "iy", "x_center", "y_center", "kl_nats"))
    for ix, iy, v in h.items():
        cx, cy = h.grid.cell_center(ix, iy)
        w.writerow((ix, iy, repr(cx), repr(cy), repr(v)))
    _write_text(buf.getvalue(), dest)
