"""End-to-end round orchestration over the simulated network.

One round: rotate -> broadcast the global weights -> local training ->
share exchange (peer augmentation, fallback or direct upload) -> secure
aggregation -> normalisation -> broadcast -> prediction to the EPDC.
Every vector that moves between nodes is serialized to HFLS bytes first.
"""

from __future__ import annotations

import csv
import dataclasses
from collections import Counter
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import datagen, derms, p2p, trainer
from .config import ExperimentConfig
from .errors import DivergedLoss, EmptyDataset, HfltnError
from .network import EPDC_ID, ChannelKind, Network, derms_id
from .p2p import AugmentationConfig, Contribution, PairingLedger, Path as SharePath
from .ring import FixedPointCodec, RingVector, SecretShare, decode_vector, encode_vector, partition
from .scheduler import Scheduler, flops_for_round
from .wire import MsgType, parse_prediction, prediction_message, serialize_share, weights_message

log = logging.getLogger(__name__)

METRIC_COLUMNS = (
    "epoch",
    "active_clients",
    "total_flops",
    "sim_time_ms",
    "per_epoch_diversity",
    "cumulative_diversity",
    "train_loss",
    "val_loss",
    "test_location_accuracy",
    "test_time_mse",
    "generalization_gap_pct",
)


@dataclass
class EvClient:
    client_id: int
    community: int
    transitory: bool
    train: trainer.Samples
    val: trainer.Samples
    test: trainer.Samples
    battery_pct: float = 100.0
    weights: np.ndarray | None = None


@dataclass
class RoundMetrics:
    epoch: int
    active_clients: int
    total_flops: int
    sim_time_ms: float
    per_epoch_diversity: float
    cumulative_diversity: float
    train_loss: float
    val_loss: float
    test_location_accuracy: float
    test_time_mse: float
    generalization_gap_pct: float

    def row(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in METRIC_COLUMNS]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


@dataclass
class PrivacyAudit:
    """Observations kept only for checking the protocol's privacy claims."""

    peer_observed: dict[int, list[SecretShare]] = field(default_factory=dict)
    encoded_weights: set[bytes] = field(default_factory=set)
    contributors_per_round: list[int] = field(default_factory=list)
    # every single payload an EV sent to a node other than itself
    single_messages: list[RingVector] = field(default_factory=list)


@dataclass
class Pooled:
    """A community's samples stacked, with the owning client of each row."""

    X: np.ndarray
    location: np.ndarray
    time: np.ndarray
    owner: np.ndarray

    @classmethod
    def of(cls, clients: Iterable[EvClient], split: str) -> "Pooled":
        parts, owners = [], []
        for c in clients:
            s = getattr(c, split)
            parts.append(s)
            owners.append(np.full(len(s), c.client_id, dtype=np.int64))
        s = trainer.concat_samples(parts)
        return cls(s.X, s.location, s.time, np.concatenate(owners) if owners else np.zeros(0, np.int64))


@dataclass
class World:
    config: ExperimentConfig
    clients: dict[int, EvClient]
    scheduler: Scheduler
    network: Network
    scaler: trainer.TimeScaler
    model: trainer.LinearDualTask
    models: dict[int, derms.GlobalModel]
    audits: dict[int, derms.AggregatorLog]
    community_features: dict[int, np.ndarray]
    pooled: dict[int, dict[str, Pooled]]
    ledger: PairingLedger = field(default_factory=PairingLedger)
    privacy: PrivacyAudit = field(default_factory=PrivacyAudit)
    epdc_records: list[derms.EpdcRecord] = field(default_factory=list)
    metrics: list[RoundMetrics] = field(default_factory=list)
    failures: list[tuple[int, int, str]] = field(default_factory=list)
    first_train_loss: float | None = None
    ops: Counter = field(default_factory=Counter)

    @property
    def codec(self) -> FixedPointCodec:
        return self.config.codec

    def members(self, community: int, ids: Iterable[int]) -> list[int]:
        return sorted(i for i in ids if self.clients[i].community == community)


def client_rng(seed: int, t: int, client_id: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, t, client_id, purpose])


# ---------------------------------------------------------------------------
# world construction
# ---------------------------------------------------------------------------


DATA_KEYS = ("n_evs", "seed", "transitory_fraction", "communities", "days", "trips_per_day")


def build_world(cfg: ExperimentConfig, audit_privacy: bool = False, data_from: World | None = None) -> World:
    """Generate the fleet and its data, then wire up an untrained federation.

    ``data_from`` reuses another world's client datasets (they are never
    mutated by training); its data-shaping config keys must match.
    """
    start = datagen.EPOCH_START
    scaler = trainer.TimeScaler(start, start + cfg.days * datagen.DAY)
    model = trainer.LinearDualTask(time_weight=cfg.time_loss_weight)
    if data_from is not None:
        for k in DATA_KEYS:
            if getattr(cfg, k) != getattr(data_from.config, k):
                raise ValueError(f"cannot share data: {k} differs")
        clients = {i: dataclasses.replace(c, weights=None) for i, c in data_from.clients.items()}
    else:
        fleet = datagen.generate_fleet(cfg.n_evs, cfg.seed, cfg.transitory_fraction, cfg.communities)
        clients = {}
        for ev in fleet:
            trips = datagen.generate_trips(ev, cfg.days, start, cfg.trips_per_day)
            clients[ev.ev_id] = _make_client(ev, trips, scaler)
    communities = sorted({c.community for c in clients.values()})
    theta0 = np.zeros(model.dim)
    models = {c: derms.GlobalModel(theta0.copy(), 0, c) for c in communities}
    pooled, feats = {}, {}
    for c in communities:
        members = [clients[i] for i in sorted(clients) if clients[i].community == c]
        pooled[c] = {s: Pooled.of(members, s) for s in ("train", "val", "test")}
        lasts = [m.train.X[-1] for m in members if len(m.train)]
        feats[c] = np.mean(lasts, axis=0) if lasts else np.zeros(model.n_features)
    world = World(
        config=cfg,
        clients=clients,
        scheduler=Scheduler(sorted(clients), cfg.cap, cfg.capping, cfg.rotation),
        network=Network(),
        scaler=scaler,
        model=model,
        models=models,
        audits={c: derms.AggregatorLog() for c in communities},
        community_features=feats,
        pooled=pooled,
    )
    if not audit_privacy:
        world.privacy = None
    return world


def _make_client(ev: datagen.EvProfile, trips, scaler) -> EvClient:
    if len(trips) >= 3:
        n_train, n_val, _ = datagen.split_counts(len(trips))
        idx = np.arange(len(trips))
        train = trainer.build_samples(trips, scaler, idx[:n_train])
        val = trainer.build_samples(trips, scaler, idx[n_train : n_train + n_val])
        test = trainer.build_samples(trips, scaler, idx[n_train + n_val :])
    else:
        train = val = test = trainer.Samples.empty()
    battery = trips[-1].battery_pct_after if trips else 100.0
    return EvClient(ev.ev_id, ev.community, ev.transitory, train, val, test, battery)


# ---------------------------------------------------------------------------
# share exchange
# ---------------------------------------------------------------------------


@dataclass
class ExchangeSettings:
    codec: FixedPointCodec
    k_transitory: int = 3
    alpha: float = 1.0
    max_peers: int = 10
    secret_sharing: bool = True
    # peers mask each other's uploads; off under the secure-aggregation
    # ablation so the DERMS can rebuild each client's vector
    peer_masking: bool = True
    seed: int = 0


def exchange(
    net: Network,
    clients: Mapping[int, object],
    weights: Mapping[int, np.ndarray],
    t: int,
    settings: ExchangeSettings,
    ledger: PairingLedger,
    audit: PrivacyAudit | None = None,
) -> dict[int, object]:
    """Run the EV side of one round for every client in ``weights``.

    ``clients`` maps id -> object with ``client_id``, ``community`` and
    ``transitory``.  Uploads are left queued at each community's DERMS.
    Returns the per-client outcome (PeerGroup, Fallback or the path taken).
    """
    codec = settings.codec
    ids = sorted(weights)
    encoded = {i: encode_vector(weights[i], codec) for i in ids}
    if audit is not None:
        audit.encoded_weights.update(rv.elems.tobytes() for rv in encoded.values())
    outcome: dict[int, object] = {}

    if not settings.secret_sharing:
        for i in ids:
            net.send(i, derms_id(clients[i].community), weights_message(i, encoded[i]), ChannelKind.MELSEC_SIM)
            outcome[i] = SharePath.PLAINTEXT
        return outcome

    roster = [clients[i] for i in ids]
    active = set(ids)
    retained: dict[int, SecretShare] = {}
    for i in ids:
        ev = clients[i]
        rng = client_rng(settings.seed, t, i, 1)
        to_derms = derms_id(ev.community)
        if ev.transitory or not settings.peer_masking:
            group = None
        else:
            group = p2p.select_peers(ev, roster, t, active, ledger, settings.max_peers)
        if isinstance(group, p2p.PeerGroup):
            shares = partition(encoded[i], len(group.members) + 1, rng, sender_id=i)
            assignment = p2p.distribute_shares(shares, group)
            for member in group.members:
                net.send(i, member, serialize_share(assignment[member]), ChannelKind.MELSEC_SIM)
            retained[i] = assignment[i]
            ledger.record(group)
            outcome[i] = group
        else:
            shares = partition(encoded[i], settings.k_transitory, rng, sender_id=i)
            for s in shares:
                net.send(i, to_derms, serialize_share(s), ChannelKind.MELSEC_SIM)
            if group is not None:
                outcome[i] = group
            else:
                outcome[i] = SharePath.TRANSITORY_DIRECT if ev.transitory else SharePath.DIRECT_FALLBACK

    # barrier: every peer send has been queued before anyone augments
    cfg = AugmentationConfig(settings.alpha, codec)
    for i in sorted(retained):
        received = [msg.as_share() for _, msg in net.receive_all(i)]
        if audit is not None:
            audit.peer_observed.setdefault(i, []).extend(received)
            audit.single_messages.extend(r.payload for r in received)
        contrib = p2p.augment(retained[i], received, cfg)
        own = retained[i]
        upload = SecretShare(i, own.share_index, own.share_count, contrib.payloads[0])
        net.send(i, derms_id(clients[i].community), serialize_share(upload), ChannelKind.MELSEC_SIM)
    return outcome


def collect_contributions(
    net: Network,
    community: int,
    clients: Mapping[int, object],
    audit: derms.AggregatorLog | None = None,
    privacy: PrivacyAudit | None = None,
) -> list[Contribution]:
    """DERMS side: group everything received this round by sender."""
    by_sender: dict[int, list] = {}
    for _, msg in net.receive_all(derms_id(community)):
        by_sender.setdefault(msg.sender_id, []).append(msg)
        if audit is not None:
            audit.record(msg.payload, f"recv {msg.msg_type.name} from {msg.sender_id}")
        if privacy is not None:
            privacy.single_messages.append(msg.payload)
    out = []
    for sender in sorted(by_sender):
        msgs = by_sender[sender]
        if msgs[0].msg_type == MsgType.WEIGHTS:
            path = SharePath.PLAINTEXT
        elif len(msgs) == 1:
            path = SharePath.P2P_AUGMENTED
        elif clients[sender].transitory:
            path = SharePath.TRANSITORY_DIRECT
        else:
            path = SharePath.DIRECT_FALLBACK
        msgs.sort(key=lambda m: m.share_index)
        out.append(Contribution(sender, tuple(m.payload for m in msgs), path))
    return out


# ---------------------------------------------------------------------------
# rounds
# ---------------------------------------------------------------------------


def run_round(world: World, t: int) -> RoundMetrics:
    cfg, net, codec = world.config, world.network, world.codec
    wall0 = time.perf_counter()
    sched = world.scheduler.schedule(t)
    active = sched.active_set
    communities = sorted(world.models)

    # Θ^t to every active client
    for c in communities:
        payload = weights_message(derms_id(c), encode_vector(world.models[c].theta, codec))
        for i in world.members(c, active):
            net.send(derms_id(c), i, payload, ChannelKind.MELSEC_SIM)

    trained: dict[int, np.ndarray] = {}
    for i in sorted(active):
        ((_, msg),) = net.receive_all(i)
        start = decode_vector(msg.payload, codec)
        try:
            w, _ = trainer.train_local(
                start,
                world.clients[i].train,
                cfg.local_epochs,
                cfg.learning_rate,
                client_rng(cfg.seed, t, i, 0),
                world.model,
                codec.w_max,
            )
        except (EmptyDataset, DivergedLoss) as e:
            log.info("round %d: client %d skipped (%s)", t, i, e)
            world.failures.append((t, i, type(e).__name__))
            continue
        if cfg.poison_client == i:
            w = np.clip(w * cfg.poison_scale, -codec.w_max, codec.w_max)
        trained[i] = w

    settings = ExchangeSettings(
        codec,
        cfg.k_transitory,
        cfg.alpha,
        cfg.max_peers,
        secret_sharing=not cfg.ablated("secret_sharing"),
        peer_masking=not cfg.ablated("secure_aggregation"),
        seed=cfg.seed,
    )
    exchange(net, world.clients, trained, t, settings, world.ledger, world.privacy)

    agg_elements = {}
    for c in communities:
        # the full DERMS log is only kept when auditing; it is large
        audit = world.audits[c] if world.privacy is not None else None
        contribs = collect_contributions(net, c, world.clients, audit, world.privacy)
        agg_elements[c] = sum(p.dim for k in contribs for p in k.payloads)
        if not contribs:
            log.info("round %d: community %d received nothing; model unchanged", t, c)
            continue
        if world.privacy is not None:
            world.privacy.contributors_per_round.append(len(contribs))
        aggregate = derms.plaintext_aggregate if cfg.ablated("secure_aggregation") else derms.secure_aggregate
        world.ops[aggregate.__name__] += 1
        theta = aggregate(contribs, len(contribs), codec, audit)
        if not cfg.ablated("normalisation"):
            theta = derms.normalize(theta, cfg.tau)
            world.ops["normalize"] += 1
        theta = np.clip(theta, -codec.w_max, codec.w_max)
        members = world.members(c, active)
        world.models[c], _ = derms.update_and_broadcast(world.models[c], theta, members)
        payload = weights_message(derms_id(c), encode_vector(world.models[c].theta, codec))
        for i in members:
            net.send(derms_id(c), i, payload, ChannelKind.MELSEC_SIM)
        for i in members:
            for _, msg in net.receive_all(i):
                world.clients[i].weights = decode_vector(msg.payload, codec)

        record = derms.emit_prediction(world.models[c], world.community_features[c], world.scaler, world.model)
        net.send(
            derms_id(c),
            EPDC_ID,
            prediction_message(derms_id(c), c, record.round, record.predicted_location, record.predicted_time),
            ChannelKind.TLS13_SIM,
        )
    for _, msg in net.receive_all(EPDC_ID):
        comm, rnd, loc, ts = parse_prediction(msg)
        world.epdc_records.append(derms.EpdcRecord(comm, loc, ts, rnd))

    sim_ms = simulated_time_ms(cfg, len(active), max(agg_elements.values(), default=0))
    net.clock_ms += sim_ms
    report = world.scheduler.report(sched)
    ev = evaluate(world, sched.history)
    if world.first_train_loss is None:
        world.first_train_loss = ev["train_loss"]
    metrics = RoundMetrics(
        epoch=t + 1,
        active_clients=len(active),
        total_flops=flops_for_round(len(active), cfg.per_client_flops),
        sim_time_ms=sim_ms,
        per_epoch_diversity=report.per_epoch_ratio,
        cumulative_diversity=report.cumulative_ratio,
        **ev,
    )
    world.metrics.append(metrics)
    log.debug("round %d done in %.3fs wall", t, time.perf_counter() - wall0)
    return metrics


def simulated_time_ms(cfg: ExperimentConfig, n_active: int, agg_elements: int) -> float:
    """Clients train in parallel on ``parallel_slots`` workers; the DERMS then
    sums what it received serially."""
    per_client_ms = cfg.per_client_flops / cfg.client_flops_per_ms
    waves = math.ceil(n_active / cfg.parallel_slots)
    return waves * per_client_ms + agg_elements * cfg.agg_ns_per_element / 1e6


def evaluate(world: World, history: set[int]) -> dict[str, float]:
    """Loss/accuracy of each community's current model on its clients.

    ``train_loss`` is the federated objective: training data of every
    enrolled client.  The generalization gap compares test loss with the
    training loss on the clients whose data actually entered training so far
    (``history``); for a run that never rotates those are the same C clients.
    """
    m = world.model
    seen = np.array(sorted(history), dtype=np.int64)
    tot = {"train": [0.0, 0], "seen": [0.0, 0], "val": [0.0, 0], "test": [0.0, 0]}
    correct, sq = 0, 0.0
    for c, pools in world.pooled.items():
        w = world.models[c].theta
        for split in ("train", "val", "test"):
            pool = pools[split]
            if not len(pool.location):
                continue
            logits, t_hat = m.forward(w, pool.X)
            per = _per_sample_ce(logits, pool.location) + m.time_weight * (t_hat - pool.time) ** 2
            tot[split][0] += float(np.sum(per))
            tot[split][1] += len(per)
            if split == "train":
                mask = np.isin(pool.owner, seen)
                tot["seen"][0] += float(np.sum(per[mask]))
                tot["seen"][1] += int(mask.sum())
            if split == "test":
                correct += int(np.sum(np.argmax(logits, axis=1) == pool.location))
                sq += float(np.sum((t_hat - pool.time) ** 2))
    mean = {k: (v[0] / v[1] if v[1] else float("nan")) for k, v in tot.items()}
    n_test = tot["test"][1]
    gap = abs(mean["test"] - mean["seen"]) / mean["seen"] * 100.0
    return {
        "train_loss": mean["train"],
        "val_loss": mean["val"],
        "test_location_accuracy": correct / n_test if n_test else float("nan"),
        "test_time_mse": sq / n_test if n_test else float("nan"),
        "generalization_gap_pct": gap,
    }


def _per_sample_ce(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - mx).sum(axis=1)) + mx[:, 0]
    return lse - logits[np.arange(len(labels)), labels]


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metrics: list[RoundMetrics]
    models: dict[int, np.ndarray]
    loss_decrease_rate_pct: float
    generalization_gap_pct: float
    world: World

    def csv_text(self) -> str:
        return metrics_csv(self.metrics)


def metrics_csv(rows: Iterable[RoundMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue()


def loss_decrease_rate(metrics: list[RoundMetrics]) -> float:
    first, last = metrics[0].train_loss, metrics[-1].train_loss
    return (first - last) / first * 100.0


def run_experiment(cfg: ExperimentConfig, audit_privacy: bool = False, world: World | None = None) -> ExperimentResult:
    world = world or build_world(cfg, audit_privacy)
    wall0 = time.perf_counter()
    for t in range(cfg.epochs):
        run_round(world, t)
    log.info(
        "experiment n_evs=%d cap=%d epochs=%d finished in %.2fs wall (%.0f ms simulated)",
        cfg.n_evs, world.scheduler.effective_cap, cfg.epochs, time.perf_counter() - wall0, world.network.clock_ms,
    )
    result = ExperimentResult(
        config=cfg,
        metrics=list(world.metrics),
        models={c: m.theta.copy() for c, m in world.models.items()},
        loss_decrease_rate_pct=loss_decrease_rate(world.metrics),
        generalization_gap_pct=world.metrics[-1].generalization_gap_pct,
        world=world,
    )
    if cfg.out:
        write_outputs(result, Path(cfg.out))
    return result


def write_outputs(result: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(result.config.to_text(), encoding="utf-8")
    (out / "metrics.csv").write_text(result.csv_text(), encoding="utf-8", newline="\n")
    for c, w in result.models.items():
        np.save(out / f"model_community_{c}.npy", w)
