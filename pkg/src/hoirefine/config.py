"""Run configuration: providers, fusion weights, keyframe interval, and
debate settings, loaded from a single JSON file. CLI flags override fields
so ablation scripts can tweak one knob at a time."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from .model import FusionWeights
from .provider import ProviderSpec

DEBATE_MODES = ("disagreement", "always", "off")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RefinementConfig:
    providers: tuple[ProviderSpec, ...]
    judge_provider: str
    keyframe_interval: int = 1
    weights: FusionWeights = FusionWeights()
    debate_mode: str = "disagreement"
    disagreement_delta: float = 0.3
    candidate_floor: float = 0.05
    batch_size: int = 16

    def __post_init__(self):
        if not self.providers:
            raise ConfigError("at least one provider is required")
        ids = [p.id for p in self.providers]
        if len(set(ids)) != len(ids):
            raise ConfigError("provider ids must be unique")
        if self.keyframe_interval < 1:
            raise ConfigError("keyframe_interval must be >= 1")
        if self.debate_mode not in DEBATE_MODES:
            raise ConfigError(f"debate_mode must be one of {DEBATE_MODES}")
        if self.disagreement_delta < 0:
            raise ConfigError("disagreement_delta must be >= 0")
        if self.judge_provider not in ids:
            raise ConfigError(f"judge_provider {self.judge_provider!r} is not configured")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def judge_spec(self) -> ProviderSpec:
        for spec in self.providers:
            if spec.id == self.judge_provider:
                return spec
        raise ConfigError(f"judge provider {self.judge_provider!r} missing")


def load_config(path: str) -> RefinementConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        specs = []
        for spec in raw["providers"]:
            spec = dict(spec)
            # mock rule tables travel with the config file
            if spec.get("rules_path") and not os.path.isabs(spec["rules_path"]):
                candidate = os.path.join(base_dir, os.path.basename(spec["rules_path"]))
                if os.path.exists(candidate):
                    spec["rules_path"] = candidate
            specs.append(ProviderSpec(**spec))
        providers = tuple(specs)
        if not providers:
            raise ConfigError(f"{path}: at least one provider is required")
        weights = FusionWeights(**raw.get("weights", {}))
        return RefinementConfig(
            providers=providers,
            judge_provider=raw.get("judge_provider", providers[0].id),
            keyframe_interval=int(raw.get("keyframe_interval", 1)),
            weights=weights,
            debate_mode=raw.get("debate_mode", "disagreement"),
            disagreement_delta=float(raw.get("disagreement_delta", 0.3)),
            candidate_floor=float(raw.get("candidate_floor", 0.05)),
            batch_size=int(raw.get("batch_size", 16)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
