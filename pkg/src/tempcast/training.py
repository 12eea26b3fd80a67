"""Mini-batch training with Adam and early stopping, metrics, and gradient checking."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import model as M
from .errors import ConfigError, ConsistencyError, DivergenceError, ParameterError
from .optimizer import AdamState, LrSchedule, adam_step, lr_at
from .preprocessing import ScalerParams, WindowedDataset, inverse_transform
from .tensor import Rng


def mse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ParameterError("mse of an empty sample is undefined")
    if y.shape != y_hat.shape:
        raise ParameterError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    d = y - y_hat
    return float(np.dot(d, d) / d.size)


def rmse(y, y_hat) -> float:
    return math.sqrt(mse(y, y_hat))


class EarlyStopping:
    """Stop once the monitored value has not improved for ``patience`` consecutive epochs.

    An epoch improves when its value is below ``best - min_delta``.
    """

    def __init__(self, patience: int, min_delta: float = 0.0):
        if patience < 1:
            raise ParameterError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0
        self.wait = 0

    def update(self, value: float) -> bool:
        """Record one epoch's value; True means stop now."""
        self.epoch += 1
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = self.epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 300
    patience: int = 7
    batch_size: int = 32
    # "auto" watches val_loss when validation data is given, train_loss otherwise
    monitor: str = "auto"
    schedule: LrSchedule = field(default_factory=LrSchedule)
    min_delta: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        for name in ("max_epochs", "patience", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.monitor not in ("auto", "train_loss", "val_loss"):
            raise ConfigError(f"unknown monitor {self.monitor!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float | None
    lr: float
    wall_time: float = field(default=0.0, compare=False)

    def line(self) -> str:
        val = "nan" if self.val_mse is None else repr(self.val_mse)
        return f"epoch={self.epoch} train_mse={self.train_mse!r} val_mse={val} lr={self.lr!r}"


@dataclass
class TrainLog:
    monitor: str
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    def monitored(self) -> list[float]:
        key = "val_mse" if self.monitor == "val_loss" else "train_mse"
        return [getattr(r, key) for r in self.records]

    def to_text(self) -> str:
        """key=value lines; deterministic (wall times are left out)."""
        lines = [f"monitor={self.monitor}"]
        lines += [r.line() for r in self.records]
        lines.append(f"stop_reason={self.stop_reason} best_epoch={self.best_epoch} epochs={len(self.records)}")
        return "\n".join(lines) + "\n"


def train(
    params: M.ParamSet,
    dataset: WindowedDataset,
    cfg: TrainConfig = TrainConfig(),
    val: WindowedDataset | None = None,
    stream=None,
):
    """Fit ``params`` to ``dataset``; returns ``(best_params, TrainLog)``.

    Each epoch visits the samples in a freshly shuffled order, one Adam step per
    batch with the learning rate of that epoch. Epoch log lines go to ``stream``
    (no output when None).
    """
    if len(dataset) == 0:
        raise ParameterError("cannot train on an empty dataset")
    monitor = cfg.monitor
    if monitor == "auto":
        monitor = "val_loss" if val is not None and len(val) else "train_loss"
    if monitor == "val_loss" and (val is None or len(val) == 0):
        raise ConfigError("monitor=val_loss needs validation data")

    rng = Rng(cfg.seed)
    state = AdamState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    log = TrainLog(monitor)
    best = params
    x_all = dataset.inputs
    y_all = dataset.targets[:, 0]
    n = len(dataset)
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        lr = lr_at(cfg.schedule, epoch - 1)
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo : lo + cfg.batch_size]
            y = y_all[idx]
            try:
                pred, cache = M.forward(params, x_all[idx], "train", rng)
                resid = pred - y
                loss = float(np.dot(resid, resid) / len(idx))
                if not math.isfinite(loss):
                    raise DivergenceError("non-finite loss")
                grads = M.backward(params, cache, 2.0 * resid / len(idx))
                named, state = adam_step(params.named_tensors(), grads.named_tensors(), state, lr)
            except FloatingPointError as exc:
                # DivergenceError is a FloatingPointError; numpy raises the plain one under seterr
                raise DivergenceError(f"epoch {epoch}, batch {b + 1}: {exc}") from exc
            params = params.with_tensors(named)
            total += loss * len(idx)
        train_mse = total / n
        val_mse = mse(val.targets, M.predict(params, val.inputs)) if val is not None and len(val) else None
        rec = EpochRecord(epoch, train_mse, val_mse, lr, time.perf_counter() - start)
        log.records.append(rec)
        if stream is not None:
            print(f"{rec.line()} elapsed={rec.wall_time:.2f}", file=stream, flush=True)
        stop = stopper.update(val_mse if monitor == "val_loss" else train_mse)
        if stopper.best_epoch == epoch:
            best = params
        if stop:
            log.stop_reason = "early_stop"
            break
    else:
        log.stop_reason = "max_epochs"
    log.best_epoch = stopper.best_epoch
    return best, log


@dataclass
class Evaluation:
    mse: float
    rmse: float
    actual: np.ndarray
    predicted: np.ndarray


def evaluate(params: M.ParamSet, dataset: WindowedDataset, scaler: ScalerParams) -> Evaluation:
    """Metrics in original units: predictions and targets are inverse-transformed first."""
    if scaler.n_features != dataset.n_features:
        raise ConsistencyError(
            f"scaler covers {scaler.n_features} features but the data has {dataset.n_features}"
        )
    if params.config.features != dataset.n_features:
        raise ConsistencyError(
            f"model expects {params.config.features} features but the data has {dataset.n_features}"
        )
    target_scaler = scaler.column(0)
    pred = inverse_transform(M.predict(params, dataset.inputs), target_scaler)
    actual = inverse_transform(dataset.targets[:, 0], target_scaler)
    m = mse(actual, pred)
    return Evaluation(m, math.sqrt(m), actual, pred)


# --------------------------------------------------------------------- gradient check

GRADCHECK_CONFIG = M.ModelConfig(
    window=6, features=1, conv_filters=(4, 4), kernel=2, lstm_units=3, lstm_depth=4,
    dropout_rate=0.2, bilstm_units=3, dense_units=4,
)


@dataclass
class BlockCheck:
    name: str
    size: int
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    blocks: list[BlockCheck]

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if b.passed else 'FAIL'} {b.name} size={b.size} max_rel_error={b.max_rel_error:.3e}"
            for b in self.blocks
        ]


def _relu_margin(params: M.ParamSet, cache: M.ForwardCache) -> float:
    margins = []
    for i, x in enumerate(cache.conv_inputs):
        margins.append(np.abs(L._conv_preact(x, params.layers[f"conv{i + 1}"])).min())
    d1 = params.layers["dense1"]
    margins.append(np.abs(cache.dense_inputs[0] @ d1.weights.T + d1.bias).min())
    return float(min(margins))


def relative_error(analytic, numeric) -> float:
    """Largest elementwise discrepancy, relative to the block's largest gradient magnitude."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def gradient_check(
    config: M.ModelConfig = GRADCHECK_CONFIG,
    tolerance: float = 1e-4,
    rng: Rng | None = None,
    step: float = 1e-5,
    batch: int = 3,
    margin: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients with central differences for every parameter block.

    Runs in train mode with a fixed dropout mask, at a random parameter point that
    keeps every ReLU pre-activation at least ``margin`` away from zero.
    """
    if sum(M.expected_counts(config).values()) >= 10_000:
        raise ConfigError("gradient check needs a down-scaled config (< 10^4 parameters)")
    rng = Rng(0) if rng is None else rng
    dropout_seed = rng.integers(0, 2**32)
    for _ in range(50):
        params = M.build(config, rng)
        params = params.map(lambda a: a + rng.uniform(-0.1, 0.1, a.shape))
        x = rng.normal(0.0, 1.0, (batch, config.window, config.features))
        y = rng.normal(0.0, 0.5, batch)
        _, cache = M.forward(params, x, "train", Rng(dropout_seed))
        if _relu_margin(params, cache) >= margin:
            break
    else:
        raise ParameterError("could not find a parameter point away from ReLU kinks")

    def loss(p):
        pred, _ = M.forward(p, x, "train", Rng(dropout_seed))
        r = pred - y
        return 0.5 * float(np.dot(r, r))

    pred, cache = M.forward(params, x, "train", Rng(dropout_seed))
    analytic = M.backward(params, cache, pred - y).named_tensors()
    named = params.named_tensors()
    blocks = []
    for name, base in named.items():
        numeric = np.empty_like(base)
        work = dict(named)
        for i in np.ndindex(base.shape):
            probe = base.copy()
            probe[i] = base[i] + step
            work[name] = probe
            up = loss(params.with_tensors(work))
            probe[i] = base[i] - step
            down = loss(params.with_tensors(work))
            numeric[i] = (up - down) / (2 * step)
        err = relative_error(analytic[name], numeric)
        blocks.append(BlockCheck(name, base.size, err, err < tolerance))
    return GradCheckReport(tolerance, blocks)
