"""Training configurations and the key-value config file that mirrors them."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

Variant = Literal["vanilla", "optimal", "per_parameter", "extra_baseline"]


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    iterations: int = 2000
    replications: int = 20
    seed: int = 0
    objective_sign: Optional[float] = None  # None: take it from the mdp
    estimator: Literal["reinforce", "gae"] = "reinforce"
    gamma: float = 1.0
    kappa: float = 1.0
    baseline_lr: float = 0.01
    baseline_mode: Literal["sgd", "mean"] = "sgd"
    value_lr: float = 0.01  # value function used for GAE bootstrapping
    gae_context: Literal["constant", "state"] = "constant"
    variance_every: int = 10
    empirical_samples: int = 200
    enumeration_bound: int = 100_000
    independent_baseline_batch: bool = False
    record_theta: bool = True
    divergence_limit: float = 1e6

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.iterations < 1 or self.replications < 1:
            raise ValueError("learning_rate >= 0, iterations >= 1, replications >= 1 required")
        if self.estimator not in ("reinforce", "gae"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass(frozen=True)
class PpoConfig:
    nsteps: int = 256
    nepochs: int = 4
    niterations: int = 50
    minibatch_size: int = 64
    epsilon: float = 0.2
    gamma: float = 0.99
    kappa: float = 0.95
    alpha_theta: float = 0.01
    alpha_psi: float = 0.01
    alpha_phi: float = 0.01
    variant: Variant = "vanilla"
    seed: int = 0
    replications: int = 1
    fixed_policy: bool = False
    zero_top: bool = False  # pin the optimal baseline numerator at 0
    context: Literal["constant", "state"] = "state"
    is_cap: float = 1e6
    divergence_limit: float = 1e6

    def __post_init__(self) -> None:
        if min(self.nsteps, self.nepochs, self.niterations, self.minibatch_size) < 1:
            raise ValueError("step, epoch, iteration and mini-batch counts must be positive")
        if self.minibatch_size > self.nsteps:
            raise ValueError("minibatch_size cannot exceed nsteps")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.variant not in ("vanilla", "optimal", "per_parameter", "extra_baseline"):
            raise ValueError(f"unknown PPO variant {self.variant!r}")


@dataclass(frozen=True)
class FixedPolicyConfig:
    train_transitions: int = 100_000
    eval_transitions: int = 100_000
    replications: int = 10
    gamma: float = 0.992
    kappa: float = 0.5
    minibatch_size: int = 1
    value_sweeps: int = 5
    seed: int = 0


def _coerce(field: dataclasses.Field, raw: str):
    kind = field.type if isinstance(field.type, str) else getattr(field.type, "__name__", "")
    raw = raw.strip()
    if "bool" in kind:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{field.name}: expected a boolean, got {raw!r}")
    if kind.startswith("Optional[float]"):
        return None if raw.lower() in ("", "none") else float(raw)
    if kind == "int":
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if kind == "float":
        return float(raw)
    return raw


def apply_overrides(cfg, overrides: dict[str, str]):
    """Return ``cfg`` with string-valued overrides coerced to each field's type."""
    fields = {f.name: f for f in dataclasses.fields(cfg)}
    changes = {}
    for key, raw in overrides.items():
        if key not in fields:
            raise KeyError(f"{type(cfg).__name__} has no field {key!r}")
        changes[key] = _coerce(fields[key], raw)
    return dataclasses.replace(cfg, **changes)


def read_config_sections(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    if not parser.read(Path(path)):
        raise FileNotFoundError(path)
    return {name: dict(parser[name]) for name in parser.sections()}
