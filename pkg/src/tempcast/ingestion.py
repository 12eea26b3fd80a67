"""Daily climate CSV reading and conversion to a dense series."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestionError
from .preprocessing import calendar_features

log = logging.getLogger(__name__)

DATE_FORMATS = {"iso": None, "dmy": ("%d/%m/%Y", "%d-%m-%Y", "%d.%m.%Y")}


@dataclass(frozen=True)
class CsvSchema:
    date_column: str = "date"
    temperature_column: str = "temperature"
    extras: tuple[str, ...] = ()
    # "iso", "dmy", or an explicit strptime pattern
    date_format: str = "iso"
    # "reject" raises on duplicate or out-of-order dates; "repair" sorts and keeps the first
    duplicate_policy: str = "reject"
    band: tuple[float, float] = (-40.0, 60.0)
    # average sub-daily (e.g. hourly) rows into one record per calendar day
    resample_daily: bool = False


@dataclass
class ClimateRecord:
    date: dt.date
    temperature: float | None
    extras: dict[str, float | None] = field(default_factory=dict)

    @property
    def missing(self) -> set[str]:
        out = {"temperature"} if self.temperature is None else set()
        return out | {k for k, v in self.extras.items() if v is None}


def parse_date(text: str, fmt: str, keep_time: bool = False):
    text = text.strip()
    if fmt == "iso":
        try:
            if keep_time or len(text) > 10:
                stamp = dt.datetime.fromisoformat(text)
                return stamp if keep_time else stamp.date()
            return dt.date.fromisoformat(text)
        except ValueError:
            raise ValueError(f"not an ISO-8601 date: {text!r}") from None
    patterns = DATE_FORMATS.get(fmt) or (fmt,)
    for pattern in patterns:
        try:
            stamp = dt.datetime.strptime(text, pattern)
        except ValueError:
            continue
        return stamp if keep_time else stamp.date()
    raise ValueError(f"date {text!r} does not match format {fmt!r}")


def _parse_float(text: str) -> float | None:
    text = text.strip()
    if text == "" or text.lower() in ("na", "nan", "null"):
        return None
    value = float(text)
    return value if np.isfinite(value) else None


def read_csv(path, schema: CsvSchema = CsvSchema()) -> list[ClimateRecord]:
    """Parse a header-first, comma-separated UTF-8 file into date-ordered records.

    Empty cells become missing values. Temperatures outside ``schema.band`` are
    logged and treated as missing.
    """
    path = Path(path)
    if schema.duplicate_policy not in ("reject", "repair"):
        raise IngestionError(f"unknown duplicate policy {schema.duplicate_policy!r}")
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestionError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path} is empty (no header row)") from None
        needed = [schema.date_column, schema.temperature_column, *schema.extras]
        for name in needed:
            if name not in header:
                raise IngestionError(f"missing column {name!r}; header has {header}", line=1)
        idx = {name: header.index(name) for name in needed}
        raw = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise IngestionError(f"expected {len(header)} fields, found {len(row)}", line=line)
            try:
                stamp = parse_date(row[idx[schema.date_column]], schema.date_format, schema.resample_daily)
            except ValueError as exc:
                raise IngestionError(str(exc), line=line, column=schema.date_column) from None
            values = {}
            for name in needed[1:]:
                try:
                    values[name] = _parse_float(row[idx[name]])
                except ValueError:
                    raise IngestionError(f"not a number: {row[idx[name]]!r}", line=line, column=name) from None
            temp = values.pop(schema.temperature_column)
            lo, hi = schema.band
            if temp is not None and not lo <= temp <= hi:
                log.warning("line %d: temperature %r outside [%g, %g], marked missing", line, temp, lo, hi)
                temp = None
            raw.append((line, stamp, temp, values))
    log.info("read %d data rows from %s", len(raw), path)

    if schema.resample_daily:
        raw = _daily_means(raw, schema.extras)
    records = _order(raw, schema.duplicate_policy)
    _log_gaps(records)
    return records


def _daily_means(raw, extras):
    groups = defaultdict(list)
    for line, stamp, temp, values in raw:
        day = stamp.date() if isinstance(stamp, dt.datetime) else stamp
        groups[day].append((line, temp, values))
    out = []
    for day, rows in groups.items():
        def mean(vals):
            present = [v for v in vals if v is not None]
            return float(np.mean(present)) if present else None

        temp = mean([r[1] for r in rows])
        values = {name: mean([r[2][name] for r in rows]) for name in extras}
        out.append((rows[0][0], day, temp, values))
    log.info("resampled to %d daily records", len(out))
    return out


def _order(raw, policy):
    if policy == "reject":
        for (prev_line, prev, *_), (line, cur, *_) in zip(raw, raw[1:]):
            if cur == prev:
                raise IngestionError(f"duplicate date {cur} (also on line {prev_line})", line=line)
            if cur < prev:
                raise IngestionError(f"date {cur} is earlier than {prev} on line {prev_line}", line=line)
        return [ClimateRecord(d, t, v) for _, d, t, v in raw]
    seen = {}
    for line, day, temp, values in sorted(raw, key=lambda r: (r[1], r[0])):
        if day in seen:
            log.warning("line %d: duplicate date %s dropped", line, day)
            continue
        seen[day] = ClimateRecord(day, temp, values)
    return list(seen.values())


def _log_gaps(records):
    gaps = sum(1 for a, b in zip(records, records[1:]) if (b.date - a.date).days > 1)
    if gaps:
        log.warning("%d gaps in the daily date sequence", gaps)


@dataclass
class Series:
    values: np.ndarray  # L x F, temperature in column 0, placeholders (0.0) where missing
    missing: np.ndarray  # L x F bool
    dates: list
    columns: list[str]


def to_series(records, extras=(), calendar: bool = False) -> Series:
    """Dense matrix of temperature, then the selected extra columns, then month and season."""
    if not records:
        raise IngestionError("no records to convert")
    columns = ["temperature", *extras]
    n = len(records)
    values = np.zeros((n, len(columns)))
    missing = np.zeros((n, len(columns)), dtype=bool)
    for i, rec in enumerate(records):
        row = [rec.temperature] + [rec.extras.get(name) for name in extras]
        for j, v in enumerate(row):
            if v is None:
                missing[i, j] = True
            else:
                values[i, j] = v
    dates = [rec.date for rec in records]
    if calendar:
        values = np.hstack([values, calendar_features(dates)])
        missing = np.hstack([missing, np.zeros((n, 2), dtype=bool)])
        columns += ["month", "season"]
    return Series(values, missing, dates, columns)


def write_csv(records, path, schema: CsvSchema = CsvSchema()):
    """Write records back out with full float precision (``repr``)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema.date_column, schema.temperature_column, *schema.extras])
        for rec in records:
            cells = [rec.date.isoformat(), "" if rec.temperature is None else repr(rec.temperature)]
            cells += ["" if rec.extras.get(k) is None else repr(rec.extras[k]) for k in schema.extras]
            w.writerow(cells)
