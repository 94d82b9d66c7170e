"""Report files: per-(model, feature) JSON, the combined summary table, the
markdown rendering, and plot-ready histogram / density grids."""

from __future__ import annotations

import csv
import io
import json
import re
from pathlib import Path

from .dataset import atomic_write_text
from .scoring import FeatureMetricReport, marginal_grid

# (json key, row label, lower_is_better)
METRICS = (
    ("marginal_kld", "Marg. KLD (↓)", True),
    ("rank_w1", "Rank W1 (↓)", True),
    ("info_gain", "Info gain (↑)", False),
)

REPORT_SCHEMA = {
    "type": "object",
    "required": ["model", "feature", "n_cells", "marginal_kld", "rank_w1", "avg_loglik",
                 "ref_loglik", "info_gain", "rank_hist", "loglik_hist"],
    "properties": {
        "model": {"type": "string"},
        "feature": {"type": "string"},
        "n_cells": {"type": "integer", "minimum": 1},
        "marginal_kld": {"type": "number"},
        "rank_w1": {"type": "number", "minimum": 0, "maximum": 50},
        "avg_loglik": {"type": "number"},
        "ref_loglik": {"type": "number"},
        "info_gain": {"type": "number"},
        "rank_hist": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "loglik_hist": {
            "type": "object",
            "required": ["edges", "counts"],
            "properties": {
                "edges": {"type": "array", "items": {"type": "number"}},
                "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            },
        },
    },
}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["features", "models", "rows"],
    "properties": {
        "features": {"type": "array", "items": {"type": "string"}},
        "models": {"type": "array", "items": {"type": "string"}},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["metric", "label", "lower_is_better", "model", "values"],
                "properties": {"values": {"type": "object"}},
            },
        },
    },
}


def slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "x"


def report_filename(model: str, feature: str) -> str:
    return f"report__{slug(model)}__{slug(feature)}.json"


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _ordered(items):
    seen = []
    for it in items:
        if it not in seen:
            seen.append(it)
    return seen


def summary_table(reports: list[dict]) -> dict:
    """Metric x model rows, one column per feature (report dicts as input)."""
    features = _ordered(r["feature"] for r in reports)
    models = _ordered(r["model"] for r in reports)
    index = {(r["model"], r["feature"]): r for r in reports}
    rows = []
    for key, label, lower in METRICS:
        for m in models:
            values = {f: index[(m, f)][key] for f in features if (m, f) in index}
            rows.append({"metric": key, "label": label, "lower_is_better": lower,
                         "model": m, "values": values})
    return {"features": features, "models": models, "rows": rows}


def render_markdown(summary: dict, digits: int = 2) -> str:
    """Markdown table; the best model per metric and feature is in bold."""
    features = summary["features"]
    lines = [
        "| Metric | Model | " + " | ".join(features) + " |",
        "|---|---|" + "---:|" * len(features),
    ]
    best = {}
    for row in summary["rows"]:
        for f, v in row["values"].items():
            k = (row["metric"], f)
            if k not in best:
                best[k] = v
            elif (v < best[k]) if row["lower_is_better"] else (v > best[k]):
                best[k] = v
    for row in summary["rows"]:
        cells = []
        for f in features:
            v = row["values"].get(f)
            if v is None:
                cells.append("")
                continue
            text = f"{v:.{digits}f}"
            if len(summary["models"]) > 1 and v == best[(row["metric"], f)]:
                text = f"**{text}**"
            cells.append(text)
        lines.append(f"| {row['label']} | {row['model']} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_score_outputs(reports: list[FeatureMetricReport], out_dir, dump_cells: bool = False) -> dict:
    """Write every report, its marginal grid sidecar and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payloads = []
    for rep in reports:
        payload = rep.to_json()
        payloads.append(payload)
        atomic_write_text(out / report_filename(rep.model_name, rep.feature), dumps(payload))
        grid = {"model": rep.model_name, "feature": rep.feature, **marginal_grid(rep)}
        atomic_write_text(out / f"marginal__{slug(rep.model_name)}__{slug(rep.feature)}.json", dumps(grid))
        if dump_cells:
            text = "".join(json.dumps(c.to_json(), allow_nan=False) + "\n" for c in rep.cells)
            atomic_write_text(out / f"cells__{slug(rep.model_name)}__{slug(rep.feature)}.jsonl", text)
    summary = summary_table(payloads)
    atomic_write_text(out / "summary.json", dumps(summary))
    return summary


def load_reports(summaries_dir) -> tuple[list[dict], dict[tuple[str, str], dict]]:
    """Read and validate every ``report__*.json``; also pick up marginal grids."""
    import jsonschema

    d = Path(summaries_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"summaries directory {d} does not exist")
    reports = []
    for path in sorted(d.glob("report__*.json")):
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            jsonschema.validate(obj, REPORT_SCHEMA)
        except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
            raise ValueError(f"invalid report {path.name}: {exc}") from None
        reports.append(obj)
    if not reports:
        raise ValueError(f"no report__*.json files in {d}")
    grids = {}
    for path in sorted(d.glob("marginal__*.json")):
        obj = json.loads(path.read_text(encoding="utf-8"))
        grids[(obj["model"], obj["feature"])] = obj
    return reports, grids


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_plot_data(reports: list[dict], grids: dict, data_dir) -> list[Path]:
    """Rank histogram, log-likelihood histogram and marginal grid CSVs per report."""
    d = Path(data_dir)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for r in reports:
        tag = f"{slug(r['model'])}__{slug(r['feature'])}"
        nb = len(r["rank_hist"])
        rank_rows = [(repr(100.0 * i / nb), repr(100.0 * (i + 1) / nb), c)
                     for i, c in enumerate(r["rank_hist"])]
        p = d / f"rank_hist__{tag}.csv"
        atomic_write_text(p, _csv_text(("bin_lo", "bin_hi", "count"), rank_rows))
        written.append(p)
        e, c = r["loglik_hist"]["edges"], r["loglik_hist"]["counts"]
        p = d / f"loglik_hist__{tag}.csv"
        atomic_write_text(p, _csv_text(("edge_lo", "edge_hi", "count"),
                                       [(repr(e[i]), repr(e[i + 1]), c[i]) for i in range(len(c))]))
        written.append(p)
        g = grids.get((r["model"], r["feature"]))
        if g and g["y"]:
            p = d / f"marginal__{tag}.csv"
            rows = [(repr(y), repr(a), repr(b)) for y, a, b in zip(g["y"], g["true_pdf"], g["model_pdf"])]
            atomic_write_text(p, _csv_text(("y", "true_pdf", "model_pdf"), rows))
            written.append(p)
    return written
