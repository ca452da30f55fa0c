"""Run configuration and its flat ``section.key = value`` file format.

Example::

    # fork3x3.cfg
    env = fork3x3
    ablation = full
    modulation.zeta = 0.1
    train.iterations = 200

Blank lines and ``#`` comments are ignored. Every key must be known; unknown
keys raise ``UnknownKey``. When ``modulation.zeta`` is not given it defaults
to 0.1 for ``ambiguity_fork`` environments and 0.05 otherwise.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .envs import AmbiguityFork, EnvSpec, InvalidSpec, parse_env_spec
from .modulation import Ablation, ModulationParams


class ConfigError(ValueError):
    pass


class UnknownKey(ConfigError):
    pass


UPDATE_RULES = ("vanilla", "clipped")
LR_SCHEDULES = ("constant", "linear")


@dataclass(frozen=True)
class RunConfig:
    env: EnvSpec = field(default_factory=lambda: parse_env_spec("chain8"))
    ablation: Ablation = Ablation.FULL
    seed: int = 0
    seeds: tuple[int, ...] = (0,)
    gamma: float = 1.0
    k: float = 1.0
    k_prime: float = 1.0
    zeta: float = 0.05
    epsilon: float = 1e-8
    group_size: int = 8
    tasks_per_batch: int = 8
    learning_rate: float = 0.05
    iterations: int = 300
    lr_schedule: str = "constant"
    filter_groups: bool = True
    checkpoint_every: int = 50
    ledger_every: int = 1
    debug_checks: bool = False
    init_scale: float = 0.0
    update_rule: str = "vanilla"
    clip_low: float = 0.2
    clip_high: float = 0.28

    def __post_init__(self):
        if self.gamma != 1.0:
            raise ConfigError("gamma is fixed at 1 (undiscounted returns)")
        if self.group_size < 2:
            raise ConfigError("train.group_size must be >= 2")
        if self.tasks_per_batch < 1:
            raise ConfigError("train.tasks_per_batch must be >= 1")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("train.learning_rate must be a positive number")
        if self.iterations < 0:
            raise ConfigError("train.iterations must be >= 0")
        if self.update_rule not in UPDATE_RULES:
            raise ConfigError(f"update.rule must be one of {UPDATE_RULES}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"train.lr_schedule must be one of {LR_SCHEDULES}")
        if not 0 <= self.clip_low < 1 or self.clip_high < 0:
            raise ConfigError("clip_low must lie in [0, 1) and clip_high must be >= 0")
        if self.checkpoint_every < 1 or self.ledger_every < 1:
            raise ConfigError("checkpoint_every and ledger_every must be >= 1")
        if self.init_scale < 0:
            raise ConfigError("policy.init_scale must be >= 0")
        try:
            self.modulation
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def horizon(self) -> int:
        return self.env.horizon

    @property
    def modulation(self) -> ModulationParams:
        return ModulationParams(self.k, self.k_prime, self.zeta, self.epsilon)

    @property
    def effective_modulation(self) -> ModulationParams:
        return self.modulation.effective(self.ablation)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


# dotted key -> (field name, parser)
def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _choice(options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return text
    return parse


KEYS = {
    "env": ("env", parse_env_spec),
    "ablation": ("ablation", Ablation),
    "seed": ("seed", int),
    "seeds": ("seeds", _int_list),
    "gamma": ("gamma", float),
    "modulation.k": ("k", float),
    "modulation.k_prime": ("k_prime", float),
    "modulation.zeta": ("zeta", float),
    "modulation.epsilon": ("epsilon", float),
    "train.group_size": ("group_size", int),
    "train.tasks_per_batch": ("tasks_per_batch", int),
    "train.learning_rate": ("learning_rate", float),
    "train.iterations": ("iterations", int),
    "train.lr_schedule": ("lr_schedule", _choice(LR_SCHEDULES)),
    "train.filter_groups": ("filter_groups", _bool),
    "train.checkpoint_every": ("checkpoint_every", int),
    "train.ledger_every": ("ledger_every", int),
    "train.debug_checks": ("debug_checks", _bool),
    "policy.init_scale": ("init_scale", float),
    "update.rule": ("update_rule", _choice(UPDATE_RULES)),
    "update.clip_low": ("clip_low", float),
    "update.clip_high": ("clip_high", float),
}


def parse_text(text: str) -> dict[str, str]:
    """Split config text into raw ``{dotted key: value string}`` pairs."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        pairs[key] = value
    return pairs


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    pairs = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def resolve(pairs: Mapping[str, str], base: Optional[RunConfig] = None) -> RunConfig:
    """Apply raw key/value pairs on top of ``base`` (defaults when omitted)."""
    unknown = sorted(set(pairs) - set(KEYS))
    if unknown:
        raise UnknownKey(f"unknown config key(s): {', '.join(unknown)}")
    changes = {}
    for key, value in pairs.items():
        name, parse = KEYS[key]
        try:
            changes[name] = parse(value)
        except (ValueError, InvalidSpec) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if base is None and "zeta" not in changes:
        env = changes.get("env", RunConfig().env)
        changes["zeta"] = 0.1 if isinstance(env, AmbiguityFork) else 0.05
    base = base or RunConfig()
    try:
        return dataclasses.replace(base, **changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load(path: Optional[str | Path] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Parse a config file (optional), then apply ``key=value`` overrides."""
    pairs = parse_text(Path(path).read_text()) if path is not None else {}
    pairs.update(parse_overrides(overrides))
    return resolve(pairs)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Ablation):
        return value.value
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def echo(cfg: RunConfig) -> str:
    """Fully resolved config in the file format; ``load`` of it reproduces ``cfg``."""
    lines = [f"{key} = {_format(getattr(cfg, name))}" for key, (name, _) in KEYS.items()]
    return "\n".join(lines) + "\n"
