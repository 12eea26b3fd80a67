"""Batch command line: train, evaluate, predict, gradcheck, params.

Exit codes: 0 ok, 2 usage, 3 data/checkpoint, 4 training divergence, 5 gradient check failed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as C
from . import model as M
from . import preprocessing as P
from . import training as T
from .errors import (
    ConfigError,
    ConsistencyError,
    DataError,
    DivergenceError,
    ParameterError,
    TempcastError,
)
from .ingestion import CsvSchema, read_csv, to_series
from .optimizer import LrSchedule
from .tensor import Rng

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5

log = logging.getLogger("tempcast")


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_data_flags(p, with_schema=True):
    p.add_argument("--data", required=True, type=Path, help="daily climate CSV (header row required)")
    if not with_schema:
        return
    p.add_argument("--date-column", default="date")
    p.add_argument("--temp-column", default="temperature", help="e.g. meantemp for the Kaggle Delhi export")
    p.add_argument("--extras", type=_str_list, default=(), help="extra numeric columns fed to the model")
    p.add_argument("--date-format", default="iso", help="iso, dmy, or a strptime pattern")
    p.add_argument("--duplicates", choices=("reject", "repair"), default="reject")
    p.add_argument("--hourly", action="store_true", help="average sub-daily rows into daily means")
    p.add_argument("--calendar", action="store_true", help="add month and season as input features")
    p.add_argument("--missing", choices=("mean", "drop"), default="mean")


def _add_model_flags(p):
    d = M.ModelConfig()
    p.add_argument("--window", type=int, default=d.window, help="W: input days per sample")
    p.add_argument("--filters", type=_int_list, default=d.conv_filters)
    p.add_argument("--kernel", type=int, default=d.kernel)
    p.add_argument("--lstm-units", type=int, default=d.lstm_units)
    p.add_argument("--lstm-depth", type=int, default=d.lstm_depth)
    p.add_argument("--bilstm-units", type=int, default=d.bilstm_units)
    p.add_argument("--dense-units", type=int, default=d.dense_units)
    p.add_argument("--dropout", type=float, default=d.dropout_rate)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempcast", description="CNN-LSTM next-day temperature forecaster")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write checkpoint, log and manifest")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--epochs", type=int, default=300, help="T: maximum epochs")
    p.add_argument("--patience", type=int, default=7, help="p: early-stopping patience")
    p.add_argument("--batch", type=int, default=32, help="B: batch size")
    p.add_argument("--lr", type=float, default=0.001, help="initial learning rate")
    p.add_argument("--decay", type=float, default=0.0, help="inverse-time decay per epoch")
    p.add_argument("--split", type=float, default=0.8, help="train fraction of the chronological split")
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="tail of the training windows held out for early stopping (0 disables)")
    p.add_argument("--monitor", choices=("auto", "train_loss", "val_loss"), default="auto")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--log-file", type=Path, help="also append epoch records here")

    p = sub.add_parser("evaluate", help="MSE/RMSE in original units plus a date,actual,predicted CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_data_flags(p, with_schema=False)
    p.add_argument("--part", choices=("test", "train", "all"), default="test")
    p.add_argument("--output", type=Path, help="prediction CSV (default: predictions.csv beside the checkpoint)")

    p = sub.add_parser("predict", help="forecast the day(s) after the last rows of a CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    _add_data_flags(p, with_schema=False)
    p.add_argument("--steps", type=int, default=1,
                   help="roll forward feeding predictions back in (errors compound)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter block")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("params", help="per-layer parameter counts against the published table")
    _add_model_flags(p)
    p.add_argument("--features", type=int, default=1)
    return parser


# ------------------------------------------------------------------- data pipeline


def _schema(meta: dict) -> CsvSchema:
    return CsvSchema(
        date_column=meta["date_column"],
        temperature_column=meta["temp_column"],
        extras=tuple(meta["extras"]),
        date_format=meta["date_format"],
        duplicate_policy=meta["duplicates"],
        resample_daily=meta["hourly"],
    )


def _load_series(path: Path, meta: dict):
    """Read, convert and clean a CSV according to the data settings in ``meta``."""
    records = read_csv(path, _schema(meta))
    series = to_series(records, meta["extras"], meta["calendar"])
    if meta["missing"] == "drop":
        values, dates = P.drop_missing(series.values, series.missing, series.dates)
        if len(values) == 0:
            raise DataError("every row has a missing value")
    else:
        values, dates = P.impute_mean(series.values, series.missing), series.dates
    return values, dates


def _split(values, dates, ratio):
    train, test = P.chronological_split(values, ratio)
    return train, test, dates[: len(train)], dates[len(train):]


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    meta = dict(
        date_column=args.date_column, temp_column=args.temp_column, extras=list(args.extras),
        date_format=args.date_format, duplicates=args.duplicates, hourly=args.hourly,
        calendar=args.calendar, missing=args.missing, split=args.split, val_fraction=args.val_fraction,
    )
    features = 1 + len(args.extras) + (2 if args.calendar else 0)
    model_cfg = M.ModelConfig(
        window=args.window, features=features, conv_filters=args.filters, kernel=args.kernel,
        lstm_units=args.lstm_units, lstm_depth=args.lstm_depth, dropout_rate=args.dropout,
        bilstm_units=args.bilstm_units, dense_units=args.dense_units, seed=args.seed,
    )
    train_cfg = T.TrainConfig(
        max_epochs=args.epochs, patience=args.patience, batch_size=args.batch, monitor=args.monitor,
        schedule=LrSchedule(args.lr, args.decay), seed=args.seed,
    )
    if not 0.0 <= args.val_fraction < 1.0:
        raise ConfigError(f"--val-fraction must lie in [0, 1), got {args.val_fraction}")

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    paths = dict(checkpoint=out / "model.ckpt", train_log=out / "train_log.txt", manifest=out / "manifest.json")
    manifest = dict(
        command="train",
        data=dict(path=str(args.data), sha256=_file_digest(args.data), **meta),
        model=model_cfg.to_dict(),
        training=dict(asdict(train_cfg), schedule=asdict(train_cfg.schedule)),
        seed=args.seed,
        artifacts={k: str(v) for k, v in paths.items()},
        versions=dict(tempcast=__version__, numpy=np.__version__, python=platform.python_version()),
    )
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    values, dates = _load_series(args.data, meta)
    train_raw, test_raw, _, _ = _split(values, dates, args.split)
    scaler = P.fit_scaler(train_raw)
    train_set = P.make_windows(P.transform(train_raw, scaler), args.window)
    test_set = P.make_windows(P.transform(test_raw, scaler), args.window)
    n_val = int(len(train_set) * args.val_fraction)
    val_set = None
    fit_set = train_set
    if n_val:
        fit_set = P.WindowedDataset(train_set.inputs[:-n_val], train_set.targets[:-n_val], args.window)
        val_set = P.WindowedDataset(train_set.inputs[-n_val:], train_set.targets[-n_val:], args.window)
    log.info("%d training, %d validation, %d test windows", len(fit_set), n_val, len(test_set))

    params = M.build(model_cfg, Rng(args.seed))
    log_fh = args.log_file.open("a", encoding="utf-8") if args.log_file else None
    try:
        stream = _Tee([sys.stdout] + ([log_fh] if log_fh else []))
        params, train_log = T.train(params, fit_set, train_cfg, val=val_set, stream=stream)
    finally:
        if log_fh:
            log_fh.close()

    C.save(params, scaler, paths["checkpoint"], meta)
    paths["train_log"].write_text(train_log.to_text(), encoding="utf-8")
    tr = T.evaluate(params, train_set, scaler)
    te = T.evaluate(params, test_set, scaler)
    print(f"stop_reason={train_log.stop_reason} best_epoch={train_log.best_epoch} epochs={len(train_log.records)}")
    print(f"train_mse={tr.mse:.5f} train_rmse={tr.rmse:.5f}")
    print(f"test_mse={te.mse:.5f} test_rmse={te.rmse:.5f}")
    return EXIT_OK


class _Tee:
    def __init__(self, streams):
        self.streams = streams

    def write(self, text):
        for s in self.streams:
            s.write(text)

    def flush(self):
        for s in self.streams:
            s.flush()


def cmd_evaluate(args) -> int:
    bundle = C.load(args.checkpoint)
    meta = bundle.meta
    values, dates = _load_series(args.data, meta)
    if values.shape[1] != bundle.config.features:
        raise ConsistencyError(f"data has {values.shape[1]} features, checkpoint expects {bundle.config.features}")
    if args.part == "all":
        part, part_dates = values, dates
    else:
        train_raw, test_raw, train_dates, test_dates = _split(values, dates, meta["split"])
        part, part_dates = (test_raw, test_dates) if args.part == "test" else (train_raw, train_dates)
    w = bundle.config.window
    windows = P.make_windows(P.transform(part, bundle.scaler), w)
    ev = T.evaluate(bundle.params, windows, bundle.scaler)

    output = args.output or args.checkpoint.with_name("predictions.csv")
    with output.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "actual", "predicted"])
        for d, a, p in zip(part_dates[w:], ev.actual, ev.predicted):
            writer.writerow([d.isoformat(), _fmt(a), _fmt(p)])
    print(f"samples={len(windows)} mse={ev.mse:.5f} rmse={ev.rmse:.5f}")
    print(f"predictions={output}")
    return EXIT_OK


def forecast(bundle: C.ModelBundle, values: np.ndarray, dates: list, steps: int) -> list[tuple[dt.date, float]]:
    """Roll the model forward ``steps`` days from the last window of ``values``.

    Each prediction is fed back as the next temperature; extra columns are held at
    their last observed value and calendar features follow the date.
    """
    cfg = bundle.config
    if steps < 1:
        raise ParameterError(f"--steps must be >= 1, got {steps}")
    if len(values) < cfg.window:
        raise P.InsufficientDataError(f"need at least {cfg.window} rows, got {len(values)}")
    scaled = P.transform(values[-cfg.window:], bundle.scaler)
    target = bundle.scaler.column(0)
    calendar = bundle.meta.get("calendar", False)
    day = dates[-1]
    out = []
    for _ in range(steps):
        y, _ = M.forward(bundle.params, scaled)
        day = day + dt.timedelta(days=1)
        out.append((day, float(P.inverse_transform(np.array([y]), target)[0])))
        row = scaled[-1].copy()
        row[0] = y
        if calendar:
            raw_cal = P.calendar_features([day])[0]
            lo, hi = bundle.scaler.min[-2:], bundle.scaler.max[-2:]
            row[-2:] = 2.0 * (raw_cal - lo) / (hi - lo) - 1.0
        scaled = np.vstack([scaled[1:], row])
    return out


def cmd_predict(args) -> int:
    bundle = C.load(args.checkpoint)
    values, dates = _load_series(args.data, bundle.meta)
    if values.shape[1] != bundle.config.features:
        raise ConsistencyError(f"data has {values.shape[1]} features, checkpoint expects {bundle.config.features}")
    for day, value in forecast(bundle, values, dates, args.steps):
        print(f"{day.isoformat()},{_fmt(value)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = T.gradient_check(tolerance=args.tolerance, rng=Rng(args.seed))
    for line in report.lines():
        print(line)
    failed = sum(not b.passed for b in report.blocks)
    print(f"blocks={len(report.blocks)} failed={failed} tolerance={args.tolerance:g}")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_params(args) -> int:
    cfg = M.ModelConfig(
        window=args.window, features=args.features, conv_filters=args.filters, kernel=args.kernel,
        lstm_units=args.lstm_units, lstm_depth=args.lstm_depth, dropout_rate=args.dropout,
        bilstm_units=args.bilstm_units, dense_units=args.dense_units,
    )
    counts = M.expected_counts(cfg)
    published = {row["layer"]: row for row in M.layer_table_report(cfg)}
    print("layer,computed,published,note")
    for layer_id, n in counts.items():
        row = published.get(layer_id)
        if row is None:
            print(f"{layer_id},{n},,")
            continue
        note = "match" if row["match"] else ("mismatch" if row["consistent"] else "inconsistent in source: " + row["implied"])
        print(f"{layer_id},{n},{row['published']},{note}")
    print(f"total,{sum(counts.values())},,")
    return EXIT_OK


COMMANDS = dict(train=cmd_train, evaluate=cmd_evaluate, predict=cmd_predict, gradcheck=cmd_gradcheck, params=cmd_params)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ConsistencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ParameterError, TempcastError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
