"""Per-epoch sim time and FLOPs vs group size, capped and uncapped.

Three seeds stand in for the A/B/C subgroups.

    python3 scripts/group_size_sweep.py --epochs 2 --days 3
"""

import argparse
import logging

import numpy as np

from hfltn.config import ExperimentConfig
from hfltn.experiments import group_size_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[150, 300, 500, 750, 1000])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=2)
    ap.add_argument("--days", type=int, default=3)
    ap.add_argument("--cap", type=int, default=150)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    base = ExperimentConfig(n_evs=max(args.sizes), cap=args.cap, epochs=args.epochs, days=args.days)
    print(f"{'mode':<10}{'n_evs':>7}{'sim_ms mean':>14}{'sim_ms sd':>11}{'flops/epoch':>14}{'loc acc':>9}")
    for capped in (True, False):
        pts = group_size_sweep(base, args.sizes, args.seeds, capped=capped)
        for n in args.sizes:
            row = [p for p in pts if p.n_evs == n]
            t = np.array([p.sim_time_ms for p in row])
            acc = np.mean([p.test_location_accuracy for p in row])
            mode = "capped" if capped else "uncapped"
            print(f"{mode:<10}{n:>7}{t.mean():>14.1f}{t.std():>11.1f}{row[0].total_flops:>14d}{acc:>9.4f}")


if __name__ == "__main__":
    main()
