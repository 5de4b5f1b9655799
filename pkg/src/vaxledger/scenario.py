"""Scenario configuration: service profile, batch knobs, config file schema.

A scenario file is a JSON document mirroring `ScenarioConfig`. Unknown keys
anywhere in the document are errors: configs are conformity-checked, not
leniently parsed. The committed `DEFAULT_PROFILE` comes out of the calibrator
(`vaxledger calibrate`) run against the reference benchmark targets shipped
under benchmarks/.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .netsim import LinkParams
from .ordering import ROLE_SIZES, BatchConfig

__all__ = [
    "ConfigError",
    "ServiceTimeProfile",
    "ScenarioConfig",
    "DEFAULT_PROFILE",
    "default_register_config",
    "default_verify_config",
    "load_config",
    "REGISTER_TPS_LEVELS",
    "VERIFY_TPS_LEVELS",
]


class ConfigError(Exception):
    """Scenario configuration is malformed or violates the schema."""


REGISTER_TPS_LEVELS = (1, 2, 4, 8, 16, 28)
VERIFY_TPS_LEVELS = (1, 2, 4, 8, 16, 28, 50, 100)


@dataclass(frozen=True)
class ServiceTimeProfile:
    """Service times, message sizes, and ambient-traffic constants.

    Durations parameterize the per-role FIFO stations; sizes parameterize
    transit and bandwidth accounting. Gossip/keepalive model the constant
    chatter (state digests, TLS keepalives) a live deployment shows even at
    1 TPS. `query_workers` is the content-query pool width: scans run
    concurrently like a database's read threads, and it bounds query
    throughput, which is what makes the service saturate under overload.
    """

    endorse_ms: float = 5.0
    commit_per_tx_ms: float = 24.0
    orderer_per_envelope_ms: float = 2.8
    query_per_record_us: float = 16.0
    rest_overhead_ms: float = 8.0
    proposal_bytes: int = 3060
    endorsement_bytes: int = 1060
    envelope_bytes: int = 7000
    block_base_bytes: int = 260
    query_bytes: int = 3560
    response_bytes: int = 1560
    gossip_bytes: int = 12740
    gossip_interval_ms: int = 100
    keepalive_bytes: int = 5440
    keepalive_interval_ms: int = 250
    query_workers: int = 18

    def __post_init__(self):
        for name in (
            "endorse_ms",
            "commit_per_tx_ms",
            "orderer_per_envelope_ms",
            "query_per_record_us",
            "rest_overhead_ms",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in (
            "proposal_bytes",
            "endorsement_bytes",
            "envelope_bytes",
            "block_base_bytes",
            "query_bytes",
            "response_bytes",
            "gossip_bytes",
            "keepalive_bytes",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.query_workers < 1:
            raise ConfigError("query_workers must be >= 1")
        if self.gossip_interval_ms <= 0 or self.keepalive_interval_ms <= 0:
            raise ConfigError("ambient traffic intervals must be positive")

    @property
    def endorse_us(self) -> int:
        return round(self.endorse_ms * 1000)

    @property
    def commit_per_tx_us(self) -> int:
        return round(self.commit_per_tx_ms * 1000)

    @property
    def orderer_per_envelope_us(self) -> int:
        return round(self.orderer_per_envelope_ms * 1000)

    @property
    def rest_overhead_us(self) -> int:
        return round(self.rest_overhead_ms * 1000)


# Fitted by `vaxledger calibrate` against benchmarks/reference_targets.csv;
# regenerate with: vaxledger calibrate --targets benchmarks/reference_targets.csv
DEFAULT_PROFILE = ServiceTimeProfile()


_STEPS = ("register", "verify")
_QUERY_MODES = ("worst_case_scan", "exact_lookup")
_VERIFY_TARGETS = ("single", "spread")
_ARRIVAL_MODES = ("uniform", "poisson")


@dataclass(frozen=True)
class ScenarioConfig:
    """One benchmark scenario: a step swept over a list of offered TPS levels.

    `preloaded_records` is the certificate-record population anchored before
    the measurement window. Verify scenarios additionally provision one
    distinct target record per planned request (a request must have something
    to look up), so the worst-case scan length at level L is
    preloaded_records + round(L * duration).

    `verify_target` selects whether verification load concentrates on a
    single worst-case member state node (default) or spreads over all 27.
    """

    step: str = "register"
    tps_levels: tuple = REGISTER_TPS_LEVELS
    duration_seconds: int = 60
    link: LinkParams = field(default_factory=LinkParams)
    service_profile: ServiceTimeProfile = field(default_factory=lambda: DEFAULT_PROFILE)
    batch: BatchConfig = field(default_factory=BatchConfig)
    query_mode: str = "worst_case_scan"
    fault_schedule: tuple = ()
    seed: int = 42
    preloaded_records: int = 0
    verify_target: str = "single"
    arrival_mode: str = "uniform"

    def __post_init__(self):
        if self.step not in _STEPS:
            raise ConfigError(f"step must be one of {_STEPS}, got {self.step!r}")
        if not self.tps_levels:
            raise ConfigError("tps_levels must be non-empty")
        if any(level <= 0 for level in self.tps_levels):
            raise ConfigError("tps_levels must be positive")
        if self.duration_seconds <= 0:
            raise ConfigError("duration_seconds must be positive")
        if self.query_mode not in _QUERY_MODES:
            raise ConfigError(f"query_mode must be one of {_QUERY_MODES}")
        if self.verify_target not in _VERIFY_TARGETS:
            raise ConfigError(f"verify_target must be one of {_VERIFY_TARGETS}")
        if self.arrival_mode not in _ARRIVAL_MODES:
            raise ConfigError(f"arrival_mode must be one of {_ARRIVAL_MODES}")
        if self.preloaded_records < 0:
            raise ConfigError("preloaded_records must be non-negative")
        for entry in self.fault_schedule:
            if len(entry) != 4:
                raise ConfigError("fault_schedule entries are [time_s, role, index, status]")
            at, role, index, status = entry
            if role not in ROLE_SIZES:
                raise ConfigError(f"unknown ordering role: {role!r}")
            if not 0 <= index < ROLE_SIZES[role]:
                raise ConfigError(f"{role} index {index} out of range")
            if status not in ("up", "down"):
                raise ConfigError("fault status must be 'up' or 'down'")
            if at < 0:
                raise ConfigError("fault time must be non-negative")


def default_register_config(**overrides) -> ScenarioConfig:
    base = dict(step="register", tps_levels=REGISTER_TPS_LEVELS)
    base.update(overrides)
    return ScenarioConfig(**base)


def default_verify_config(**overrides) -> ScenarioConfig:
    base = dict(
        step="verify",
        tps_levels=VERIFY_TPS_LEVELS,
        preloaded_records=4700,
        query_mode="worst_case_scan",
    )
    base.update(overrides)
    return ScenarioConfig(**base)


def _build_strict(cls, doc: dict, context: str):
    allowed = {f for f in cls.__dataclass_fields__}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {sorted(unknown)}")
    return doc


def config_from_dict(doc: dict) -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("scenario config must be a JSON object")
    doc = dict(doc)
    _build_strict(ScenarioConfig, doc, "scenario config")
    try:
        if "link" in doc:
            doc["link"] = LinkParams(**_build_strict(LinkParams, doc["link"], "link"))
        if "service_profile" in doc:
            doc["service_profile"] = ServiceTimeProfile(
                **_build_strict(ServiceTimeProfile, doc["service_profile"], "service_profile")
            )
        if "batch" in doc:
            doc["batch"] = BatchConfig(**_build_strict(BatchConfig, doc["batch"], "batch"))
        if "tps_levels" in doc:
            doc["tps_levels"] = tuple(doc["tps_levels"])
        if "fault_schedule" in doc:
            doc["fault_schedule"] = tuple(tuple(entry) for entry in doc["fault_schedule"])
        return ScenarioConfig(**doc)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config: ScenarioConfig) -> dict:
    doc = asdict(config)
    doc["tps_levels"] = list(config.tps_levels)
    doc["fault_schedule"] = [list(entry) for entry in config.fault_schedule]
    return doc


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario config {path}: {exc}") from exc
    return config_from_dict(doc)
