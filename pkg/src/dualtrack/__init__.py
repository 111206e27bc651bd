"""Dual-track conversational orchestration engine.

A fast track answers every turn within a hard time-to-first-token budget
(direct replies or bridging acknowledgements) while a slow track runs
plan/execute/generate agent workflows asynchronously; an exactly-once event
bus folds slow-track results back into the live transcript. Ships with a
virtual-clock benchmark harness, an interaction-log curation pipeline, an
HTTP service, and a CLI.
"""

from .config import EngineConfig, load_config
from .engine import Engine, TurnRecord
from .sim import Scheduler

__version__ = "0.1.0"

__all__ = ["Engine", "EngineConfig", "Scheduler", "TurnRecord", "load_config", "__version__"]
