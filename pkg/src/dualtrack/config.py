"""Engine and harness configuration.

One flat surface selects backends, budgets, latency models, and thresholds.
The config file format is flat `key = value` text; CLI flags override file
values, which override the defaults below.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class EngineConfig:
    seed: int = 42

    # fast track
    ttft_budget_ms: float = 500.0
    responder_latency_ms: float = 10.0
    classifier_latency_ms: float = 0.0

    # perception
    perception_mode: str = "decoupled"  # decoupled | monolithic
    perception_decoupled_ms: float = 480.0
    perception_monolithic_ms: float = 2100.0

    # slow track
    step_timeout_ms: float = 8000.0
    task_concurrency: int = 4
    delegation_depth_cap: int = 2
    delegation_deadline_ms: float = 8000.0
    max_live_subtasks: int = 8
    clarify_candidate_threshold: int = 5
    clarify_score_margin: float = 0.05
    clarify_abandon_turns: int = 3

    # sync bus
    surface_artifacts: bool = True

    # tools
    latency_profile: str = "default"  # default | heavy
    heavy_lognormal_mu: float = 6.0
    heavy_lognormal_sigma: float = 1.8
    tool_failure_rate: float = 0.0

    # evolution
    sentiment_silver_threshold: float = 0.0
    gold_sample_rate: float = 0.2
    fold_token_cap: int = 60

    # harness
    gtr_base_ms: float = 1500.0
    gtr_per_token_ms: float = 40.0
    session_gap_minutes: float = 30.0
    inter_turn_gap_ms: float = 1000.0

    # backends
    responder_backend: str = "template"  # template | http
    classifier_backend: str = "rules"  # rules | http
    responder_url: str = ""
    classifier_url: str = ""
    perceptor_url: str = ""

    generalist_profile: str = "Generalist"
    log_dir: str = ""

    def replace(self, **overrides) -> "EngineConfig":
        return dataclasses.replace(self, **overrides)

    def perception_latency_ms(self) -> float:
        if self.perception_mode == "monolithic":
            return self.perception_monolithic_ms
        if self.perception_mode == "decoupled":
            return self.perception_decoupled_ms
        raise ConfigurationError(f"unknown perception mode: {self.perception_mode!r}")

    def fingerprint(self) -> dict:
        """Stable mapping of every config key, embedded in reports."""
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(EngineConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"bad boolean for {name}: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str, base: EngineConfig | None = None) -> EngineConfig:
    """Parse flat `key = value` lines; '#' starts a comment."""
    cfg = base or EngineConfig()
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        overrides[key] = _coerce(key, value)
    return cfg.replace(**overrides)


def load_config(path: str | Path | None, **overrides) -> EngineConfig:
    cfg = EngineConfig()
    if path:
        cfg = parse_config_text(Path(path).read_text(encoding="utf-8"), cfg)
    cleaned = {k: v for k, v in overrides.items() if v is not None}
    if cleaned:
        cfg = cfg.replace(**cleaned)
    return cfg
