"""Campaign configuration: a fully seeded description of one testing run."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .coverage import UPDATE_POLICIES, VARIANTS

METHODS = ("mdpfuzz", "fuzzer", "random")
ENV_NAMES = ("cartpole", "taxi", "landerlite")


class ConfigError(ValueError):
    """An invalid or inconsistent campaign or sweep description."""


@dataclass(frozen=True)
class CampaignConfig:
    env: str
    method: str
    policy: str = ""
    budget: int = 5000
    init_samples: int = 1000
    k: int = 10
    tau: float = 0.01
    gamma: float = 0.01
    variant: str = "faithful"
    update_policy: str = "full_sequence"
    update_fraction: float = 0.1
    include_sampling: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}; choose from {ENV_NAMES}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        for name in ("budget", "init_samples", "k", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.budget < 1:
            raise ConfigError("budget must be positive")
        if self.method != "random":
            if self.init_samples < 1:
                raise ConfigError("init_samples must be positive")
            if self.budget < self.init_cost:
                raise ConfigError(
                    f"budget {self.budget} is below the sampling cost 3 x {self.init_samples} = {self.init_cost}")
        if self.k < 1:
            raise ConfigError("k must be positive")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown coverage variant {self.variant!r}")
        if self.update_policy not in UPDATE_POLICIES:
            raise ConfigError(f"unknown update policy {self.update_policy!r}")
        if not 0.0 < self.update_fraction <= 1.0:
            raise ConfigError("update_fraction must lie in (0, 1]")

    @property
    def init_cost(self) -> int:
        # two sensitivity rollouts plus one coverage rollout per sampled input
        return 3 * self.init_samples

    @property
    def policy_ref(self) -> str:
        return self.policy or f"builtin:{self.env}"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "CampaignConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        missing = {"env", "method"} - set(doc)
        if missing:
            raise ConfigError(f"missing config fields: {sorted(missing)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def load_config(path) -> CampaignConfig:
    """Read a config file; a relative policy path is resolved against the file's directory."""
    path = Path(path)
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    policy = doc.get("policy", "")
    if policy and ":" not in policy and not Path(policy).is_absolute():
        doc["policy"] = str((path.parent / policy).resolve())
    return CampaignConfig.from_json(doc)
