"""Paired CRM on/off runs over many seeds; reports gap and loss-decrease wins.

    python3 scripts/crm_generalization.py --seeds 20
"""

import argparse
import logging

import numpy as np

from hfltn.config import ExperimentConfig
from hfltn.runtime import build_world, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--n-evs", type=int, default=500)
    ap.add_argument("--cap", type=int, default=150)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    rows = []
    for seed in range(args.seeds):
        cfg = ExperimentConfig(n_evs=args.n_evs, cap=args.cap, epochs=args.epochs, seed=seed)
        crm_world = build_world(cfg)
        ctl_cfg = cfg.replace(crm_enabled=False)
        # same clients and data for both arms
        ctl_world = build_world(ctl_cfg, data_from=crm_world)
        a = run_experiment(cfg, world=crm_world)
        b = run_experiment(ctl_cfg, world=ctl_world)
        rows.append((a.generalization_gap_pct, b.generalization_gap_pct, a.loss_decrease_rate_pct, b.loss_decrease_rate_pct))
        print(f"seed {seed:>3}: gap {rows[-1][0]:7.2f}% vs {rows[-1][1]:7.2f}%   decrease {rows[-1][2]:7.2f}% vs {rows[-1][3]:7.2f}%")
    r = np.array(rows)
    print(f"gap smaller with CRM: {int((r[:, 0] < r[:, 1]).sum())}/{len(r)}")
    print(f"loss decrease larger with CRM: {int((r[:, 2] > r[:, 3]).sum())}/{len(r)}")


if __name__ == "__main__":
    main()
