"""Train the scaled-down forecaster on a noisy annual sinusoid and compare with persistence.

    python scripts/synthetic_sinusoid.py --epochs 100 --seed 0
"""

import argparse
import math
import sys
import time

import numpy as np

from tempcast import model as M
from tempcast import preprocessing as P
from tempcast import training as T
from tempcast.optimizer import LrSchedule
from tempcast.tensor import Rng


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=2000)
    ap.add_argument("--period", type=float, default=365.0)
    ap.add_argument("--amplitude", type=float, default=10.0)
    ap.add_argument("--noise", type=float, default=1.0)
    ap.add_argument("--data-seed", type=int, default=123)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--lr", type=float, default=0.001)
    ap.add_argument("--window", type=int, default=30)
    ap.add_argument("--lag", type=int, default=24, help="persistence baseline lag")
    args = ap.parse_args()

    t = np.arange(args.length)
    series = args.amplitude * np.sin(2 * np.pi * t / args.period) + Rng(args.data_seed).normal(0, args.noise, t.size)
    train_part, test_part = P.chronological_split(series[:, None], 0.8)
    sc = P.fit_scaler(train_part)
    windows = P.make_windows(P.transform(train_part, sc), args.window)
    n_val = len(windows) // 10
    fit = P.WindowedDataset(windows.inputs[:-n_val], windows.targets[:-n_val], args.window)
    val = P.WindowedDataset(windows.inputs[-n_val:], windows.targets[-n_val:], args.window)

    cfg = M.ModelConfig(window=args.window, conv_filters=(16, 8), lstm_units=8, lstm_depth=2,
                        bilstm_units=8, dense_units=16, seed=args.seed)
    train_cfg = T.TrainConfig(max_epochs=args.epochs, patience=args.patience, seed=args.seed,
                              schedule=LrSchedule(args.lr))
    start = time.perf_counter()
    params, log = T.train(M.build(cfg), fit, train_cfg, val=val, stream=sys.stdout)
    result = T.evaluate(params, P.make_windows(P.transform(test_part, sc), args.window), sc)

    y = test_part[:, 0]
    w, lag = args.window, args.lag
    persistence = math.sqrt(float(np.mean((y[w:] - y[w - lag : -lag]) ** 2)))
    print(f"stop_reason={log.stop_reason} best_epoch={log.best_epoch} seconds={time.perf_counter() - start:.1f}")
    print(f"test_rmse={result.rmse:.5f} persistence_rmse={persistence:.5f} noise_sigma={args.noise}")


if __name__ == "__main__":
    main()
