"""Experiment configuration: flat ``key = value`` files plus flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigInvalid
from .ring import FixedPointCodec
from .scheduler import DEFAULT_CAP, DEFAULT_PER_CLIENT_FLOPS

ABLATIONS = ("capping_rotating", "secret_sharing", "secure_aggregation", "normalisation")


@dataclass(frozen=True)
class ExperimentConfig:
    n_evs: int
    cap: int = DEFAULT_CAP
    epochs: int = 10
    seed: int = 0
    communities: int = 2
    dccm_enabled: bool = True
    crm_enabled: bool = True
    ablations: frozenset = frozenset()
    alpha: float = 1.0
    tau: float = 100.0
    k_transitory: int = 3
    per_client_flops: int = DEFAULT_PER_CLIENT_FLOPS
    out: str | None = None
    # data
    days: int = 28
    transitory_fraction: float = 0.2
    trips_per_day: float = 4.0
    # local training
    local_epochs: int = 5
    learning_rate: float = 0.4
    time_loss_weight: float = 1.0
    # ring
    scale_bits: int = 32
    w_max: float = float(2**20)
    max_peers: int = 10
    # simulated time
    parallel_slots: int = 16
    client_flops_per_ms: float = 499.2
    agg_ns_per_element: float = 2.0
    # outlier fixture
    poison_client: int | None = None
    poison_scale: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "ablations", frozenset(self.ablations))
        self.validate()

    def validate(self) -> None:
        if self.n_evs < 1:
            raise ConfigInvalid("n_evs", "must be >= 1")
        if self.cap < 1:
            raise ConfigInvalid("cap", "must be >= 1")
        if self.dccm_enabled and "capping_rotating" not in self.ablations and self.cap > self.n_evs:
            raise ConfigInvalid("cap", f"cap {self.cap} exceeds n_evs {self.n_evs}")
        if self.epochs < 1:
            raise ConfigInvalid("epochs", "must be >= 1")
        if self.communities < 1:
            raise ConfigInvalid("communities", "must be >= 1")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ConfigInvalid("ablations", f"unknown ablation(s) {sorted(unknown)}; known: {list(ABLATIONS)}")
        if not self.tau > 0:
            raise ConfigInvalid("tau", "must be positive")
        if self.k_transitory < 2:
            raise ConfigInvalid("k_transitory", "must be >= 2")
        if not 2 <= self.max_peers <= 10:
            raise ConfigInvalid("max_peers", "must lie in [2, 10]")
        if not 0 <= self.transitory_fraction <= 1:
            raise ConfigInvalid("transitory_fraction", "must lie in [0, 1]")
        if self.days < 1:
            raise ConfigInvalid("days", "must be >= 1")
        if self.learning_rate < 0:
            raise ConfigInvalid("learning_rate", "must be non-negative")
        if self.per_client_flops < 0:
            raise ConfigInvalid("per_client_flops", "must be non-negative")
        if self.parallel_slots < 1:
            raise ConfigInvalid("parallel_slots", "must be >= 1")
        if self.poison_client is not None and not 0 <= self.poison_client < self.n_evs:
            raise ConfigInvalid("poison_client", "not an enrolled client id")
        try:
            self.codec.check_headroom(self.n_evs)
        except ConfigInvalid as e:
            raise ConfigInvalid("w_max", str(e)) from None

    @property
    def codec(self) -> FixedPointCodec:
        return FixedPointCodec(self.scale_bits, self.w_max)

    @property
    def capping(self) -> bool:
        return self.dccm_enabled and "capping_rotating" not in self.ablations

    @property
    def rotation(self) -> bool:
        return self.crm_enabled and "capping_rotating" not in self.ablations

    def ablated(self, name: str) -> bool:
        return name in self.ablations

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, frozenset):
                v = ",".join(sorted(v))
            lines.append(f"{f.name} = {'' if v is None else v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: Any) -> Any:
    f = _FIELDS[key]
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if not isinstance(raw, str):
        return frozenset(raw) if key == "ablations" else raw
    raw = raw.strip()
    try:
        if key == "ablations":
            return frozenset(a.strip() for a in raw.split(",") if a.strip())
        if t.startswith("bool"):
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        if "None" in t and raw in ("", "none", "None"):
            return None
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigInvalid(key, f"cannot parse {raw!r} as {t}") from None


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}", f"expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigInvalid(key, "unknown configuration key")
        values[key] = value
    return values


def parse_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> ExperimentConfig:
    """File values first, then flag overrides; every key validated."""
    values: dict[str, Any] = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigInvalid("config", f"file {path} does not exist")
        values.update(read_config_file(path))
    for k, v in (overrides or {}).items():
        if k not in _FIELDS:
            raise ConfigInvalid(k, "unknown configuration key")
        if v is not None:
            values[k] = v
    if "n_evs" not in values:
        raise ConfigInvalid("n_evs", "required")
    kwargs = {k: _coerce(k, v) for k, v in values.items()}
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as e:
        raise ConfigInvalid("config", str(e)) from None
