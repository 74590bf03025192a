"""Command line entry point.

    python3 -m hfltn run --n-evs 500 --epochs 10 --out runs/base
    python3 -m hfltn ablate --config exp.cfg --out runs/ablation
    python3 -m hfltn generate-data --n-evs 50 --days 30 --out trips.csv

Exit codes: 0 success, 2 invalid configuration, 1 any other failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import datagen
from .config import parse_config
from .errors import ConfigInvalid
from .experiments import run_ablation_matrix, summary_table
from .runtime import run_experiment

log = logging.getLogger("hfltn")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--n-evs", type=int)
    p.add_argument("--cap", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--no-dccm", action="store_true", help="disable client capping")
    p.add_argument("--no-crm", action="store_true", help="disable client rotation")
    p.add_argument("--ablate", action="append", default=[], metavar="NAME")
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfltn", description="Hierarchical federated learning simulator")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run one experiment"))
    ab = sub.add_parser("ablate", help="baseline plus every single-feature ablation")
    _add_common(ab)
    ab.add_argument("--no-privacy-audit", action="store_true")
    gen = sub.add_parser("generate-data", help="write synthetic trips as CSV")
    gen.add_argument("--n-evs", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--days", type=int, default=datagen.YEAR_DAYS)
    gen.add_argument("--out", required=True)
    return parser


def config_from_args(args: argparse.Namespace):
    overrides = {
        "n_evs": args.n_evs,
        "cap": args.cap,
        "epochs": args.epochs,
        "seed": args.seed,
        "out": args.out,
        "alpha": args.alpha,
        "tau": args.tau,
    }
    if args.no_dccm:
        overrides["dccm_enabled"] = "false"
    if args.no_crm:
        overrides["crm_enabled"] = "false"
    if args.ablate:
        overrides["ablations"] = ",".join(args.ablate)
    for item in args.set:
        if "=" not in item:
            raise ConfigInvalid(item, "expected KEY=VALUE")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return parse_config(args.config, overrides)


def _run(args) -> None:
    cfg = config_from_args(args)
    res = run_experiment(cfg)
    sys.stdout.write(res.csv_text())
    print(
        f"# loss decrease {res.loss_decrease_rate_pct:.3f}%  generalization gap {res.generalization_gap_pct:.3f}%",
        file=sys.stderr,
    )


def _ablate(args) -> None:
    cfg = config_from_args(args)
    runs = run_ablation_matrix(cfg, cfg.out, audit_privacy=not args.no_privacy_audit)
    sys.stdout.write(summary_table(runs))


def _generate(args) -> None:
    fleet = datagen.generate_fleet(args.n_evs, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        n = datagen.write_trips((t for ev in fleet for t in datagen.generate_trips(ev, args.days)), fh)
    print(f"wrote {n} trips for {args.n_evs} EVs to {out}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _run, "ablate": _ablate, "generate-data": _generate}
    try:
        handlers[args.command](args)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - top-level reporting
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0
