"""CSV ingestion, report emission and run manifests.

Every writer is deterministic: floats are written with ``repr`` (shortest
round-trip form), JSON keys are sorted and nothing time-dependent is
recorded, so re-running a manifest reproduces each file byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .assessment import AssessmentReport
from .errors import ParseError, ValidationError
from .survival import BINARY, CATEGORICAL, CONTINUOUS, ColumnKind, SurvivalDataset

log = logging.getLogger("coximpute")

TIME, STATUS = "time", "status"
KINDS = (TIME, STATUS, CONTINUOUS, BINARY, CATEGORICAL)
MISSING_OUT = "NA"


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = CONTINUOUS
    levels: tuple = ()  # labels of a categorical column, in index order
    missing_token: str = "NA"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"column {self.name!r}: unknown kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if self.kind == CATEGORICAL and len(self.levels) < 2:
            raise ValidationError(f"categorical column {self.name!r} needs at least two levels")

    def column_kind(self) -> ColumnKind:
        if self.kind == CATEGORICAL:
            return ColumnKind.categorical(len(self.levels))
        return ColumnKind(self.kind)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d


def check_specs(specs) -> None:
    kinds = [s.kind for s in specs]
    if kinds.count(TIME) != 1 or kinds.count(STATUS) != 1:
        raise ValidationError("a schema needs exactly one time and one status column")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValidationError("column names in a schema must be unique")


def infer_specs(header) -> list:
    """Default schema: columns named time and status, all others continuous."""
    specs = [ColumnSpec(h, h if h in (TIME, STATUS) else CONTINUOUS) for h in header]
    check_specs(specs)
    return specs


def load_schema(path) -> list:
    raw = json.loads(Path(path).read_text())
    cols = raw["columns"] if isinstance(raw, dict) else raw
    specs = [ColumnSpec(**c) for c in cols]
    check_specs(specs)
    return specs


def schema_to_json(specs) -> str:
    return json.dumps({"columns": [s.to_dict() for s in specs]}, indent=2, sort_keys=True) + "\n"


def _parse_float(cell, row, col):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number", row, col) from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col!r}: non-finite value {cell!r}", row, col)
    return v


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        return [h.strip() for h in header], [r for r in reader if r]


def load_csv(path, specs=None) -> tuple:
    """Read a survival dataset; returns ``(SurvivalDataset, specs)``.

    Data rows are numbered from 1 (the header is row 0) in error messages.
    """
    header, rows = _read_rows(path)
    specs = list(specs) if specs is not None else infer_specs(header)
    check_specs(specs)
    missing_cols = [s.name for s in specs if s.name not in header]
    if missing_cols:
        raise ValidationError(f"{path}: header lacks columns {missing_cols}")
    index = {h: i for i, h in enumerate(header)}
    n = len(rows)
    time = np.empty(n)
    status = np.empty(n, dtype=np.int64)
    pred_specs = [s for s in specs if s.kind not in (TIME, STATUS)]
    X = np.zeros((n, len(pred_specs)))
    mask = np.zeros_like(X, dtype=bool)
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} fields, found {len(row)}", i, None)
        j = 0
        for s in specs:
            cell = row[index[s.name]].strip()
            if s.kind == TIME:
                if cell == s.missing_token:
                    raise ValidationError(f"row {i}: missing follow-up time")
                time[i - 1] = _parse_float(cell, i, s.name)
                if time[i - 1] <= 0:
                    raise ValidationError(f"row {i}: follow-up time must be positive, got {cell}")
            elif s.kind == STATUS:
                if cell not in ("0", "1"):
                    raise ValidationError(f"row {i}: status must be 0 or 1, got {cell!r}")
                status[i - 1] = int(cell)
            else:
                if cell == s.missing_token:
                    mask[i - 1, j] = True
                    X[i - 1, j] = np.nan
                elif s.kind == CATEGORICAL:
                    if cell not in s.levels:
                        raise ParseError(f"row {i}, column {s.name!r}: unknown level {cell!r}", i, s.name)
                    X[i - 1, j] = s.levels.index(cell)
                else:
                    X[i - 1, j] = _parse_float(cell, i, s.name)
                    if s.kind == BINARY and X[i - 1, j] not in (0.0, 1.0):
                        raise ValidationError(f"row {i}, column {s.name!r}: binary value must be 0 or 1")
                j += 1
    data = SurvivalDataset(time, status, X, mask, tuple(s.column_kind() for s in pred_specs),
                           tuple(s.name for s in pred_specs))
    counts = ", ".join(f"{s.name}={int(mask[:, j].sum())}" for j, s in enumerate(pred_specs))
    log.info("read %d rows from %s; missing cells: %s", n, path, counts or "none")
    return data, specs


def load_predictors(path, specs) -> tuple:
    """Read prediction rows (no outcome columns); returns ``(X, mask)`` in schema order."""
    header, rows = _read_rows(path)
    pred_specs = [s for s in specs if s.kind not in (TIME, STATUS)]
    absent = [s.name for s in pred_specs if s.name not in header]
    if absent:
        raise ValidationError(f"{path}: header lacks columns {absent}")
    index = {h: i for i, h in enumerate(header)}
    X = np.zeros((len(rows), len(pred_specs)))
    mask = np.zeros_like(X, dtype=bool)
    for i, row in enumerate(rows, start=1):
        for j, s in enumerate(pred_specs):
            cell = row[index[s.name]].strip()
            if cell == s.missing_token:
                mask[i - 1, j] = True
                X[i - 1, j] = np.nan
            elif s.kind == CATEGORICAL:
                if cell not in s.levels:
                    raise ParseError(f"row {i}, column {s.name!r}: unknown level {cell!r}", i, s.name)
                X[i - 1, j] = s.levels.index(cell)
            else:
                X[i - 1, j] = _parse_float(cell, i, s.name)
    return X, mask


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return MISSING_OUT
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def save_csv(path, data: SurvivalDataset, specs=None) -> list:
    """Write ``data`` so that ``load_csv`` returns an identical dataset."""
    if specs is None:
        specs = [ColumnSpec(TIME, TIME), ColumnSpec(STATUS, STATUS)]
        for name, kind in zip(data.column_names, data.column_kinds):
            if kind.kind == CATEGORICAL:
                specs.append(ColumnSpec(name, CATEGORICAL, tuple(str(v) for v in range(kind.levels))))
            else:
                specs.append(ColumnSpec(name, kind.kind))
    check_specs(specs)
    out = _io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([s.name for s in specs])
    for i in range(data.n):
        row, j = [], 0
        for s in specs:
            if s.kind == TIME:
                row.append(_fmt(float(data.time[i])))
            elif s.kind == STATUS:
                row.append(str(int(data.status[i])))
            else:
                if data.missing_mask[i, j]:
                    row.append(s.missing_token)
                elif s.kind == CATEGORICAL:
                    row.append(s.levels[int(data.predictors[i, j])])
                elif s.kind == BINARY:
                    row.append(str(int(data.predictors[i, j])))
                else:
                    row.append(_fmt(float(data.predictors[i, j])))
                j += 1
        writer.writerow(row)
    Path(path).write_text(out.getvalue())
    return specs


# ---------------------------------------------------------------------------
# reports, predictions and manifests


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def report_csv(report: AssessmentReport) -> str:
    out = _io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(AssessmentReport.COLUMNS)
    for r in report.rows:
        writer.writerow([_fmt(r[c]) for c in AssessmentReport.COLUMNS])
    return out.getvalue()


def write_report(report: AssessmentReport, directory, stem: str = "report") -> list:
    """Write ``<stem>.csv`` and its JSON mirror ``<stem>.json``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = directory / f"{stem}.csv", directory / f"{stem}.json"
    csv_path.write_text(report_csv(report))
    json_path.write_text(canonical_json({"columns": list(AssessmentReport.COLUMNS), "rows": report.rows,
                                         "meta": report.meta}))
    return [csv_path, json_path]


def read_report(path) -> AssessmentReport:
    """Read a report CSV back (values as floats, NA as None)."""
    report = AssessmentReport()
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            report.add(r["method"], int(r["K"]), float(r["horizon"]), r["stratum"], r["metric"],
                       None if r["value"] == MISSING_OUT else float(r["value"]))
    return report


PREDICTION_COLUMNS = ("method", "replicate", "horizon", "subject", "imputation", "survival")


def write_predictions(path, prediction_sets) -> Path:
    """Long-format survival probabilities.

    ``prediction_sets`` maps (method, replicate) to a PredictionSet; subjects
    are numbered from 0 in input row order.
    """
    out = _io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(PREDICTION_COLUMNS)
    for (method, rep), ps in prediction_sets.items():
        C = ps.constituents
        for h, t in enumerate(ps.horizons):
            for i in range(C.shape[1]):
                for k in range(C.shape[2]):
                    writer.writerow([method, rep, _fmt(float(t)), i, k, _fmt(float(C[h, i, k]))])
    Path(path).write_text(out.getvalue())
    return Path(path)


def read_predictions(path) -> dict:
    """Inverse of ``write_predictions``: {(method, replicate): (horizons, array (H, n, K))}."""
    cells = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            try:
                key = (r["method"], int(r["replicate"]))
                cells.setdefault(key, []).append((float(r["horizon"]), int(r["subject"]), int(r["imputation"]),
                                                  float(r["survival"])))
            except (KeyError, ValueError) as err:
                raise ParseError(f"{path}: malformed prediction row {r}: {err}") from None
    out = {}
    for key, entries in cells.items():
        horizons = sorted({e[0] for e in entries})
        n = max(e[1] for e in entries) + 1
        K = max(e[2] for e in entries) + 1
        arr = np.full((len(horizons), n, K), np.nan)
        hidx = {h: i for i, h in enumerate(horizons)}
        for h, i, k, v in entries:
            arr[hidx[h], i, k] = v
        if np.isnan(arr).any():
            raise ParseError(f"{path}: predictions for {key} are incomplete")
        out[key] = (np.array(horizons), arr)
    return out


def model_to_dict(model) -> dict:
    """JSON form of a CoxFit or PooledCoxModel."""
    d = {"beta": [float(b) for b in model.beta],
         "baseline_knots": [float(v) for v in model.baseline_cumhaz.knots],
         "baseline_values": [float(v) for v in model.baseline_cumhaz.values]}
    if getattr(model, "design_spec", None) is not None:
        d["design"] = model.design_spec.to_dict()
    if hasattr(model, "variant"):
        d["variant"] = model.variant
    return d


@dataclass
class Manifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256
    version: str = ""

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "config_hash": config_hash(self.config),
                "seeds": self.seeds, "outputs": self.outputs, "version": self.version}

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.json"
        path.write_text(canonical_json(self.to_dict()))
        return path
