"""Min-max scaling onto [-1, 1], imputation, calendar features and windowing."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateFeatureError,
    DimensionError,
    ImputationError,
    InsufficientDataError,
    ParameterError,
    SplitError,
)


def _as_2d(series) -> np.ndarray:
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"expected an L x F series, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature minimum and maximum recorded from the fit (training) data."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.min, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.max, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError(f"min/max shapes differ: {lo.shape} vs {hi.shape}")
        bad = np.flatnonzero(~(hi > lo))
        if bad.size:
            raise DegenerateFeatureError(f"feature column {int(bad[0])} has max <= min")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def n_features(self) -> int:
        return self.min.shape[0]

    def column(self, j: int) -> "ScalerParams":
        return ScalerParams(self.min[j : j + 1], self.max[j : j + 1])


def fit_scaler(series) -> ScalerParams:
    arr = _as_2d(series)
    if arr.shape[0] < 2:
        raise InsufficientDataError("need at least two rows to fit a scaler")
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    for j in range(arr.shape[1]):
        if not hi[j] > lo[j]:
            raise DegenerateFeatureError(f"feature column {j} is constant ({lo[j]!r})")
    return ScalerParams(lo, hi)


def _check_features(x: np.ndarray, p: ScalerParams):
    if x.shape[-1] != p.n_features and p.n_features != 1:
        raise DimensionError(f"last axis {x.shape[-1]} does not match {p.n_features} scaled features")


def transform(x, p: ScalerParams) -> np.ndarray:
    """x' = 2 (x - min) / (max - min) - 1, featurewise along the last axis. Not clamped."""
    x = np.asarray(x, dtype=np.float64)
    _check_features(x, p)
    return 2.0 * (x - p.min) / (p.max - p.min) - 1.0


def inverse_transform(x, p: ScalerParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_features(x, p)
    return (x + 1.0) * (p.max - p.min) / 2.0 + p.min


def impute_mean(series, missing_mask) -> np.ndarray:
    """Replace masked entries with the mean of the present entries of their column."""
    arr = _as_2d(series).copy()
    mask = np.asarray(missing_mask, dtype=bool).reshape(arr.shape)
    for j in range(arr.shape[1]):
        present = ~mask[:, j]
        if not present.any():
            raise ImputationError(f"column {j} has no present values to average")
        if present.all():
            continue
        arr[~present, j] = arr[present, j].mean()
    return arr


def drop_missing(series, missing_mask, dates=None):
    """Row-drop alternative to :func:`impute_mean`; returns ``(series, dates)``."""
    arr = _as_2d(series)
    mask = np.asarray(missing_mask, dtype=bool).reshape(arr.shape)
    keep = ~mask.any(axis=1)
    kept_dates = None if dates is None else [d for d, k in zip(dates, keep) if k]
    return arr[keep], kept_dates


def season_of(month: int) -> int:
    # meteorological seasons: DJF=0, MAM=1, JJA=2, SON=3
    return (month % 12) // 3


def calendar_features(dates) -> np.ndarray:
    """Month (1-12) and meteorological season (0-3) per date, as an L x 2 float array."""
    out = np.empty((len(dates), 2), dtype=np.float64)
    for i, d in enumerate(dates):
        if not isinstance(d, dt.date):
            raise ParameterError(f"row {i}: expected a date, got {d!r}")
        out[i, 0] = d.month
        out[i, 1] = season_of(d.month)
    return out


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray  # N x W x F
    targets: np.ndarray  # N x 1
    window_length: int
    horizon: int = 1

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]


def make_windows(series, window: int) -> WindowedDataset:
    """Sample i is rows i..i+W-1 of ``series``; its target is column 0 of row i+W."""
    arr = _as_2d(series)
    n_rows = arr.shape[0]
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if n_rows <= window:
        raise InsufficientDataError(f"series of length {n_rows} is too short for window {window}")
    n = n_rows - window
    idx = np.arange(n)[:, None] + np.arange(window)[None, :]
    return WindowedDataset(arr[idx], arr[window:, :1].copy(), window)


def chronological_split(series, ratio: float = 0.8):
    if not 0.0 < ratio < 1.0:
        raise ParameterError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(series)
    cut = int(np.floor(ratio * n))
    if cut == 0 or cut == n:
        raise SplitError(f"ratio {ratio} on {n} rows leaves an empty side")
    return series[:cut], series[cut:]
