"""Evaluation data model and CSV / JSONL ingestion.

One row per (model, image, cell, feature): the observed ``true_value`` and the
``K`` values the model sampled for that cell. CSV rows carry the samples as a
single ``;``-joined field; JSONL rows carry them as an array.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

CSV_COLUMNS = ("model", "image_id", "cell_id", "feature", "true_value", "samples")
SAMPLE_SEP = ";"
DEFAULT_POOL_CAP = 1_000_000


class TableError(ValueError):
    """Malformed or inconsistent evaluation table."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass(frozen=True)
class FeatureId:
    """Feature token; the free-text label is not part of its identity."""

    id: str
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.id:
            raise TableError("feature id must be non-empty")

    def __str__(self):
        return self.id


@dataclass(frozen=True)
class CellRecord:
    image_id: str
    cell_id: str
    feature: FeatureId
    true_value: float
    predicted_samples: tuple[float, ...]

    def __post_init__(self):
        if len(self.predicted_samples) < 2:
            raise TableError(
                f"cell ({self.image_id}, {self.cell_id}) needs at least 2 samples, "
                f"got {len(self.predicted_samples)}"
            )
        if not math.isfinite(self.true_value):
            raise TableError(f"non-finite true value for cell ({self.image_id}, {self.cell_id})")
        if not all(math.isfinite(v) for v in self.predicted_samples):
            raise TableError(f"non-finite sample for cell ({self.image_id}, {self.cell_id})")

    @property
    def key(self) -> tuple[str, str]:
        return (self.image_id, self.cell_id)

    @property
    def k(self) -> int:
        return len(self.predicted_samples)


@dataclass(frozen=True)
class EvaluationTable:
    """Immutable set of cell records for one model.

    Records keep their input order. Per-feature views (true values and the
    ``N x K`` sample matrix) are built once at construction.
    """

    model_name: str
    records: tuple[CellRecord, ...]
    _by_feature: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        groups: dict[str, list[CellRecord]] = {}
        seen = set()
        for i, rec in enumerate(records, start=1):
            key = (rec.image_id, rec.cell_id, rec.feature.id)
            if key in seen:
                raise TableError(f"duplicate (image, cell, feature) key {key}", row=i)
            seen.add(key)
            group = groups.setdefault(rec.feature.id, [])
            if group and group[0].k != rec.k:
                raise TableError(
                    f"feature {rec.feature.id} has K={rec.k} but earlier rows have K={group[0].k}",
                    row=i,
                )
            group.append(rec)
        views = {}
        for fid, group in groups.items():
            truth = np.array([r.true_value for r in group])
            samples = np.array([r.predicted_samples for r in group])
            truth.setflags(write=False)
            samples.setflags(write=False)
            views[fid] = (tuple(group), truth, samples)
        object.__setattr__(self, "_by_feature", views)

    @property
    def features(self) -> list[FeatureId]:
        return [group[0].feature for group, _, _ in self._by_feature.values()]

    def _view(self, feature):
        fid = feature.id if isinstance(feature, FeatureId) else str(feature)
        try:
            return self._by_feature[fid]
        except KeyError:
            raise KeyError(f"unknown feature {fid!r} in table for model {self.model_name!r}") from None

    def records_for(self, feature) -> tuple[CellRecord, ...]:
        return self._view(feature)[0]

    def true_values(self, feature) -> np.ndarray:
        return self._view(feature)[1]

    def sample_matrix(self, feature) -> np.ndarray:
        return self._view(feature)[2]

    def n_cells(self, feature) -> int:
        return len(self.records_for(feature))

    def k_samples(self, feature) -> int:
        return self.sample_matrix(feature).shape[1]

    def cells_per_image(self, feature) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.records_for(feature):
            counts[rec.image_id] = counts.get(rec.image_id, 0) + 1
        return counts

    def n_images(self, feature) -> int:
        return len(self.cells_per_image(feature))

    def map_values(self, fn) -> "EvaluationTable":
        """New table with ``fn`` applied to every true value and sample."""
        recs = []
        for r in self.records:
            recs.append(CellRecord(
                r.image_id, r.cell_id, r.feature, float(fn(r.true_value)),
                tuple(float(v) for v in fn(np.asarray(r.predicted_samples))),
            ))
        return EvaluationTable(self.model_name, tuple(recs))


def _parse_float(text, row: int, what: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise TableError(f"cannot parse {what} {text!r}", row=row) from None
    if not math.isfinite(value):
        raise TableError(f"non-finite {what} {text!r}", row=row)
    return value


def _build(rows: Iterable[tuple[int, dict]], samples_of) -> list[EvaluationTable]:
    by_model: dict[str, list[CellRecord]] = {}
    k_seen: dict[tuple[str, str], int] = {}
    keys: set = set()
    features: dict[str, FeatureId] = {}
    for row_no, row in rows:
        missing = [c for c in CSV_COLUMNS if row.get(c) in (None, "")]
        if missing:
            raise TableError(f"missing field(s) {', '.join(missing)}", row=row_no)
        model = str(row["model"])
        fid = str(row["feature"])
        feature = features.setdefault(fid, FeatureId(fid))
        true_value = _parse_float(row["true_value"], row_no, "true_value")
        samples = tuple(_parse_float(v, row_no, "sample") for v in samples_of(row["samples"], row_no))
        if len(samples) < 2:
            raise TableError(f"need at least 2 samples, got {len(samples)}", row=row_no)
        k_prev = k_seen.setdefault((model, fid), len(samples))
        if k_prev != len(samples):
            raise TableError(
                f"inconsistent K for feature {fid}: {len(samples)} samples, earlier rows have {k_prev}",
                row=row_no,
            )
        key = (model, str(row["image_id"]), str(row["cell_id"]), fid)
        if key in keys:
            raise TableError(f"duplicate (image, cell, feature) key {key[1:]}", row=row_no)
        keys.add(key)
        by_model.setdefault(model, []).append(
            CellRecord(str(row["image_id"]), str(row["cell_id"]), feature, true_value, samples)
        )
    return [EvaluationTable(m, tuple(recs)) for m, recs in by_model.items()]


def _csv_rows(fh) -> Iterator[tuple[int, dict]]:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
        raise TableError(f"CSV header must be exactly {','.join(CSV_COLUMNS)}, got {reader.fieldnames}")
    for i, row in enumerate(reader, start=1):
        if None in row:
            raise TableError("too many fields", row=i)
        yield i, row


def _jsonl_rows(fh) -> Iterator[tuple[int, dict]]:
    i = 0
    for line in fh:
        if not line.strip():
            continue
        i += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TableError(f"invalid JSON: {exc.msg}", row=i) from None
        if not isinstance(obj, dict):
            raise TableError("expected a JSON object", row=i)
        yield i, obj


def _csv_samples(text, row):
    return str(text).split(SAMPLE_SEP)


def _jsonl_samples(value, row):
    if not isinstance(value, list):
        raise TableError("samples must be an array", row=row)
    return value


def detect_format(path) -> str:
    return "jsonl" if Path(path).suffix.lower() in (".jsonl", ".ndjson") else "csv"


def parse_tables(path, format: str | None = None) -> list[EvaluationTable]:
    """Parse a file holding one or more models; one table per model, in file order."""
    fmt = format or detect_format(path)
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            return _build(_csv_rows(fh), _csv_samples)
        if fmt == "jsonl":
            return _build(_jsonl_rows(fh), _jsonl_samples)
    raise ValueError(f"unsupported format {fmt!r}")


def parse_table(path, format: str | None = None) -> EvaluationTable:
    tables = parse_tables(path, format)
    if len(tables) != 1:
        raise TableError(f"expected exactly one model in {path}, found {len(tables)}")
    return tables[0]


def _rows(tables: Sequence[EvaluationTable]):
    for t in tables:
        for r in t.records:
            yield t.model_name, r


def write_csv(tables: EvaluationTable | Sequence[EvaluationTable], path) -> None:
    """Write tables in the long CSV layout; floats use ``repr`` so re-parsing is exact."""
    if isinstance(tables, EvaluationTable):
        tables = [tables]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for model, r in _rows(tables):
        w.writerow([model, r.image_id, r.cell_id, r.feature.id, repr(r.true_value),
                    SAMPLE_SEP.join(repr(v) for v in r.predicted_samples)])
    atomic_write_text(path, buf.getvalue())


def write_jsonl(tables: EvaluationTable | Sequence[EvaluationTable], path) -> None:
    if isinstance(tables, EvaluationTable):
        tables = [tables]
    lines = []
    for model, r in _rows(tables):
        lines.append(json.dumps({
            "model": model, "image_id": r.image_id, "cell_id": r.cell_id,
            "feature": r.feature.id, "true_value": r.true_value,
            "samples": list(r.predicted_samples),
        }))
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text: str) -> None:
    """Write-then-rename so readers never observe a half-written file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def pool_true_values(table: EvaluationTable, feature) -> np.ndarray:
    """All true values of ``feature`` in table order."""
    return table.true_values(feature).copy()


def pool_predicted_samples(table: EvaluationTable, feature, cap: int = DEFAULT_POOL_CAP,
                           seed: int = 0) -> np.ndarray:
    """Pool every cell's samples, thinning uniformly per cell above ``cap``.

    When ``N * K > cap`` each cell contributes ``cap // N`` of its samples,
    chosen without replacement, so every cell is represented and the pool
    never exceeds ``cap``.
    """
    samples = table.sample_matrix(feature)
    n, k = samples.shape
    if cap < n:
        raise ValueError(f"cap={cap} is smaller than the number of cells ({n})")
    if n * k <= cap:
        return samples.ravel().copy()
    per_cell = cap // n
    rng = np.random.default_rng(seed)
    pick = np.argsort(rng.random((n, k)), axis=1)[:, :per_cell]
    pick.sort(axis=1)
    return np.take_along_axis(samples, pick, axis=1).ravel()
