from __future__ import annotations

import pytest

from dualtrack.config import EngineConfig
from dualtrack.engine import Engine
from dualtrack.sim import Scheduler


@pytest.fixture
def sched() -> Scheduler:
    return Scheduler()


@pytest.fixture
def config() -> EngineConfig:
    return EngineConfig()


@pytest.fixture
def engine(config, sched) -> Engine:
    return Engine(config, sched)


def settle(engine: Engine, session_id: str, limit_ms: float = 600_000.0) -> bool:
    return engine.sched.run_until(
        lambda: engine.session_quiescent(session_id),
        limit_ms=engine.sched.now + limit_ms,
    )
