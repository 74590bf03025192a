"""Baseline plus each single ablation; writes per-run outputs and summary.txt.

    python3 scripts/ablation_matrix.py --out runs/ablation
"""

import argparse
import logging

from hfltn.config import ExperimentConfig
from hfltn.experiments import run_ablation_matrix, summary_table


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-evs", type=int, default=100)
    ap.add_argument("--cap", type=int, default=50)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--poison-client", type=int, default=None)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    base = ExperimentConfig(
        n_evs=args.n_evs, cap=args.cap, epochs=args.epochs, seed=args.seed, poison_client=args.poison_client
    )
    runs = run_ablation_matrix(base, args.out)
    print(summary_table(runs))


if __name__ == "__main__":
    main()
