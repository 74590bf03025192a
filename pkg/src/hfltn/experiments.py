"""Multi-run experiments: the ablation matrix and group-size sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import privacy
from .config import ABLATIONS, ExperimentConfig
from .runtime import ExperimentResult, World, run_experiment
from .wire import MsgType

log = logging.getLogger(__name__)


def protocol_paths(world: World) -> dict[str, str]:
    """Which variant of each protocol stage a run actually exercised.

    Derived from the network's message-type census and the DERMS op counts,
    so an ablation can be checked to change exactly one stage.
    """
    census = world.network.census
    uploads = sorted({MsgType(m).name.lower() for (s, r, m) in census if s == "ev" and r == "derms"})
    ops = world.ops
    sched = world.scheduler
    return {
        "schedule": f"cap={sched.effective_cap},rotation={sched.rotation and sched.capping}",
        "upload": "+".join(uploads),
        "aggregation": "per_client_decode" if ops["plaintext_aggregate"] else "ring_sum",
        "normalisation": "on" if ops["normalize"] else "off",
    }


@dataclass
class AblationRun:
    name: str
    result: ExperimentResult
    privacy: privacy.PrivacyReport | None
    paths: dict[str, str]
    census: dict[str, int] = field(default_factory=dict)


def _census_row(world: World) -> dict[str, int]:
    return {
        f"{s}->{r}:{MsgType(m).name.lower()}": n
        for (s, r, m), n in sorted(world.network.census.items())
    }


def run_ablation_matrix(
    base: ExperimentConfig,
    out: str | Path | None = None,
    audit_privacy: bool = True,
    names: Sequence[str] = ABLATIONS,
) -> list[AblationRun]:
    """Baseline plus one run per single ablation, all on the base seed."""
    runs = []
    for name in ("baseline", *names):
        ablations = set(base.ablations) | ({name} if name != "baseline" else set())
        sub = None if out is None else str(Path(out) / name)
        cfg = base.replace(ablations=frozenset(ablations), out=sub)
        log.info("ablation run %s", name)
        res = run_experiment(cfg, audit_privacy=audit_privacy)
        report = privacy.check(res.world) if audit_privacy else None
        runs.append(AblationRun(name, res, report, protocol_paths(res.world), _census_row(res.world)))
        if not audit_privacy:
            # free the world; it holds every client's data
            res.world = None
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "summary.txt").write_text(summary_table(runs), encoding="utf-8")
    return runs


def summary_table(runs: Sequence[AblationRun]) -> str:
    head = f"{'run':<20}{'test_acc':>10}{'time_mse':>12}{'flops/epoch':>14}{'gap%':>9}{'privacy':>9}  paths"
    lines = [head, "-" * len(head)]
    for r in runs:
        m = r.result.metrics[-1]
        priv = "-" if r.privacy is None else ("holds" if r.privacy.holds else "FAILS")
        paths = " ".join(f"{k}={v}" for k, v in r.paths.items())
        lines.append(
            f"{r.name:<20}{m.test_location_accuracy:>10.4f}{m.test_time_mse:>12.5f}"
            f"{m.total_flops:>14d}{m.generalization_gap_pct:>9.2f}{priv:>9}  {paths}"
        )
    lines.append("")
    lines.append("message-type census")
    keys = sorted({k for r in runs for k in r.census})
    lines.append(f"{'run':<20}" + "".join(f"{k:>24}" for k in keys))
    for r in runs:
        lines.append(f"{r.name:<20}" + "".join(f"{r.census.get(k, 0):>24d}" for k in keys))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SweepPoint:
    n_evs: int
    seed: int
    capped: bool
    sim_time_ms: float
    total_flops: int
    test_location_accuracy: float


def group_size_sweep(
    base: ExperimentConfig,
    sizes: Sequence[int] = (150, 300, 500, 750, 1000),
    seeds: Sequence[int] = (0, 1, 2),
    capped: bool = True,
) -> list[SweepPoint]:
    """One run per (size, seed); three seeds stand in for subgroups A, B, C."""
    points = []
    for n in sizes:
        for s in seeds:
            cfg = base.replace(n_evs=n, seed=s, dccm_enabled=capped, cap=min(base.cap, n))
            res = run_experiment(cfg)
            m = res.metrics[-1]
            points.append(SweepPoint(n, s, capped, m.sim_time_ms, m.total_flops, m.test_location_accuracy))
    return points
