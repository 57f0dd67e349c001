"""Run configuration: schema, defaults, YAML loading, and validation.

One YAML document drives every subcommand. The tree mirrors the dataclasses
below; every field has a default, so a config file only needs to override
what it changes. ``schema_version`` is required and currently must be 1.

Calibration notes baked into the defaults:

* Costs derive from an energy model: electricity at $0.05/kWh, rig
  efficiency 35 J/TH, a 600-second block interval, and a network rate chosen
  so the all-honest margin is comfortably positive. An agent's opex is its
  hash share of the network power bill.
* One epoch is one block interval; the subsidy halves every 210,000 epochs,
  so desk-scale runs see a flat subsidy.
* The initial discount factor is 0.9 (beta = 1/9 in the structural formula),
  and the default action constants put the binding grim-trigger threshold of
  the ten-agent, 0.4-concentration stage game near 0.54, leaving headroom
  for noise-driven collapse inside the sweep ranges.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import yaml

from .discounting import DiscountParams
from .model import ActionConstants, MinerAgent, ProtocolState, RewardSchedule
from .mutation import MutationConfig

__all__ = [
    "AgentDefaults",
    "ConfigError",
    "CostModel",
    "DpConfig",
    "SimConfig",
    "SweepGrids",
    "StrategyRule",
    "config_to_dict",
    "load_config",
    "parse_grid",
]

SCHEMA_VERSION = 1

# Joules per kWh.
_J_PER_KWH = 3.6e6


class StrategyRule:
    MYOPIC = "myopic"
    TRIGGER = "trigger"
    BELLMAN = "bellman"

    ALL = (MYOPIC, TRIGGER, BELLMAN)


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists field-level messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class AgentDefaults:
    beta: float = 1.0 / 9.0
    kappa: float = 1.0
    delta0: float = 0.9
    confidence0: float = 1.0
    capital_per_share: float = 50_000.0


@dataclass(frozen=True)
class CostModel:
    energy_price_kwh: float = 0.05
    efficiency_j_per_th: float = 35.0
    network_ths: float = 1.0e5
    block_seconds: float = 600.0

    def network_opex_per_epoch(self) -> float:
        joules = self.network_ths * self.efficiency_j_per_th * self.block_seconds
        return joules / _J_PER_KWH * self.energy_price_kwh


@dataclass(frozen=True)
class DpConfig:
    grid_levels: int = 2
    kernel_samples: int = 10_000
    tolerance: float = 1e-8
    max_iter: int = 2000
    mutability_grid: tuple = (0.0, 0.04, 0.08, 0.12, 0.16, 0.2, 0.24, 0.28)
    bridge_phi: bool = True
    abandonment_samples: int = 2000


@dataclass(frozen=True)
class SweepGrids:
    eps: tuple = tuple(i * 0.3 / 15 for i in range(16))
    kappa: tuple = tuple(i * 2.0 / 8 for i in range(9))
    gamma: tuple = tuple(0.1 + i * 0.8 / 8 for i in range(9))
    replicates: int = 4


@dataclass(frozen=True)
class SimConfig:
    epochs: int = 5000
    n_agents: int = 10
    seed: int = 42
    lottery_mode: bool = False
    sample_interval: int = 100
    strategy_rule: str = StrategyRule.TRIGGER
    gamma_max: float = 0.4
    hash_shares: tuple | None = None  # explicit shares override gamma_max
    protocol: ProtocolState = field(default_factory=ProtocolState)
    reward: RewardSchedule = field(default_factory=RewardSchedule)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    discount: DiscountParams = field(default_factory=DiscountParams)
    agents: AgentDefaults = field(default_factory=AgentDefaults)
    costs: CostModel = field(default_factory=CostModel)
    actions: ActionConstants = field(default_factory=ActionConstants)
    dp: DpConfig = field(default_factory=DpConfig)
    sweep: SweepGrids = field(default_factory=SweepGrids)

    def shares(self) -> tuple:
        if self.hash_shares is not None:
            return tuple(self.hash_shares)
        return concentration_shares(self.gamma_max, self.n_agents)

    def build_agents(self) -> tuple:
        """Materialize the agent roster from shares and the cost model."""
        network_opex = self.costs.network_opex_per_epoch()
        roster = []
        for i, share in enumerate(self.shares()):
            roster.append(
                MinerAgent(
                    id=i,
                    hash_share=share,
                    beta=self.agents.beta,
                    kappa=self.agents.kappa,
                    discount=self.agents.delta0,
                    confidence=self.agents.confidence0,
                    capital_stock=share * self.agents.capital_per_share,
                    opex_rate=share * network_opex,
                )
            )
        return tuple(roster)


def concentration_shares(gamma_max: float, n_agents: int) -> tuple:
    """Largest agent takes ``gamma_max``; the rest split the remainder."""
    if n_agents == 1:
        return (1.0,)
    rest = (1.0 - gamma_max) / (n_agents - 1)
    return (gamma_max,) + (rest,) * (n_agents - 1)


def validate(cfg: SimConfig) -> list:
    """Field-level validation messages (empty when the config is usable)."""
    errors = []
    if cfg.epochs < 1:
        errors.append(f"epochs: must be >= 1, got {cfg.epochs}")
    if cfg.n_agents < 1:
        errors.append(f"n_agents: must be >= 1, got {cfg.n_agents}")
    if cfg.sample_interval < 1:
        errors.append(f"sample_interval: must be >= 1, got {cfg.sample_interval}")
    if cfg.strategy_rule not in StrategyRule.ALL:
        errors.append(
            f"strategy_rule: must be one of {StrategyRule.ALL}, got {cfg.strategy_rule!r}"
        )
    if not 0 <= cfg.seed < 2**64:
        errors.append("seed: must fit in 64 bits")
    shares = None
    if cfg.hash_shares is not None:
        if len(cfg.hash_shares) != cfg.n_agents:
            errors.append(
                f"hash_shares: expected {cfg.n_agents} entries, got {len(cfg.hash_shares)}"
            )
        else:
            shares = cfg.hash_shares
    else:
        if not 0.0 < cfg.gamma_max <= 1.0:
            errors.append(f"gamma_max: must be in (0, 1], got {cfg.gamma_max}")
        elif cfg.n_agents == 1 or cfg.gamma_max < 1.0:
            shares = concentration_shares(cfg.gamma_max, cfg.n_agents)
        else:
            errors.append("gamma_max: must be < 1 with more than one agent")
    if shares is not None:
        if any(not 0.0 < s <= 1.0 for s in shares):
            errors.append("hash shares: every share must be in (0, 1]")
        elif abs(sum(shares) - 1.0) > 1e-9:
            errors.append(f"hash shares: must sum to 1 +- 1e-9, got {sum(shares)!r}")
    if cfg.sweep.replicates < 1:
        errors.append(f"sweep.replicates: must be >= 1, got {cfg.sweep.replicates}")
    for axis in ("eps", "kappa", "gamma"):
        if len(getattr(cfg.sweep, axis)) < 1:
            errors.append(f"sweep.{axis}: grid must be nonempty")
    if cfg.dp.grid_levels < 2:
        errors.append(f"dp.grid_levels: must be >= 2, got {cfg.dp.grid_levels}")
    return errors


_SECTIONS = {
    "protocol": ProtocolState,
    "reward": RewardSchedule,
    "mutation": MutationConfig,
    "discount": DiscountParams,
    "agents": AgentDefaults,
    "costs": CostModel,
    "actions": ActionConstants,
    "dp": DpConfig,
    "sweep": SweepGrids,
}

_SCALARS = (
    "epochs",
    "n_agents",
    "seed",
    "lottery_mode",
    "sample_interval",
    "strategy_rule",
    "gamma_max",
    "hash_shares",
)


def _build_section(cls, data, path, errors):
    kwargs = {}
    defaults = cls()
    for key, value in data.items():
        if not hasattr(defaults, key):
            errors.append(f"{path}.{key}: unknown field")
            continue
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{path}: {exc}")
        return defaults


def load_config(path: str, seed_override: int | None = None) -> SimConfig:
    """Load and validate a configuration file.

    Raises :class:`ConfigError` with field-level messages on any problem,
    including an unreadable file or a schema-version mismatch.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"config: invalid YAML in {path}: {exc}"]) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError([f"config: top level must be a mapping, got {type(data).__name__}"])

    errors = []
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")

    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                errors.append(f"{key}: must be a mapping")
                continue
            kwargs[key] = _build_section(_SECTIONS[key], value, key, errors)
        elif key in _SCALARS:
            if isinstance(value, list):
                value = tuple(value)
            kwargs[key] = value
        else:
            errors.append(f"{key}: unknown field")
    try:
        cfg = SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(errors + [f"config: {exc}"])
    if seed_override is not None:
        cfg = replace(cfg, seed=seed_override)
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def config_to_dict(cfg: SimConfig) -> dict:
    """JSON-ready snapshot of a config (for the run manifest)."""
    out = {"schema_version": SCHEMA_VERSION}
    for name in _SCALARS:
        value = getattr(cfg, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    for name, cls in _SECTIONS.items():
        section = asdict(getattr(cfg, name))
        out[name] = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in section.items()
        }
    return out


def parse_grid(spec: str) -> tuple:
    """Parse a ``start:stop:count`` axis spec with inclusive endpoints."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid spec must be start:stop:count, got {spec!r}")
    try:
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError as exc:
        raise ValueError(f"grid spec {spec!r}: {exc}") from exc
    if count < 1:
        raise ValueError(f"grid spec {spec!r}: count must be >= 1")
    if count == 1:
        return (start,)
    step = (stop - start) / (count - 1)
    return tuple(start + i * step for i in range(count))
