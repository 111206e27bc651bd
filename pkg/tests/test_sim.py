"""Scheduler kernel: ordering, processes, guards, determinism."""

from __future__ import annotations

from dualtrack.sim import Scheduler, SimTimeout


def test_events_run_in_due_order():
    sched = Scheduler()
    seen = []
    sched.call_later(30, seen.append, "c")
    sched.call_later(10, seen.append, "a")
    sched.call_later(20, seen.append, "b")
    sched.run_until_idle()
    assert seen == ["a", "b", "c"]
    assert sched.now == 30


def test_ties_break_by_scheduling_order():
    sched = Scheduler()
    seen = []
    for name in "abc":
        sched.call_later(5, seen.append, name)
    sched.run_until_idle()
    assert seen == ["a", "b", "c"]


def test_cancel_prevents_execution():
    sched = Scheduler()
    seen = []
    handle = sched.call_later(5, seen.append, "x")
    sched.cancel(handle)
    sched.run_until_idle()
    assert seen == []


def test_process_sleeps_advance_virtual_time():
    sched = Scheduler()

    def proc():
        yield 100
        yield 50
        return sched.now

    task = sched.spawn(proc())
    sched.run_until_idle()
    assert task.done and task.value == 150


def test_process_waits_on_signal_and_gets_value():
    sched = Scheduler()
    sig = sched.signal()
    sched.call_later(40, sig.succeed, "payload")

    def proc():
        value = yield sig
        return value, sched.now

    task = sched.spawn(proc())
    sched.run_until_idle()
    assert task.value == ("payload", 40)


def test_signal_failure_is_thrown_into_process():
    sched = Scheduler()
    sig = sched.signal()
    sched.call_later(10, sig.fail, RuntimeError("boom"))

    def proc():
        try:
            yield sig
        except RuntimeError as exc:
            return f"caught {exc}"

    task = sched.spawn(proc())
    sched.run_until_idle()
    assert task.value == "caught boom"


def test_guard_times_out_a_stalled_signal():
    sched = Scheduler()
    stalled = sched.never()

    def proc():
        try:
            yield sched.guard(stalled, 500)
        except SimTimeout:
            return sched.now

    task = sched.spawn(proc())
    sched.run_until_idle()
    assert task.value == 500


def test_guard_passes_through_a_fast_signal():
    sched = Scheduler()
    sig = sched.signal()
    sched.call_later(100, sig.succeed, 7)

    def proc():
        return (yield sched.guard(sig, 500))

    task = sched.spawn(proc())
    sched.run_until_idle()
    assert task.value == 7
    assert sched.now == 100  # cancelled guard timer never advances the clock


def test_run_until_stops_at_condition():
    sched = Scheduler()
    seen = []
    for delay in (10, 20, 30, 40):
        sched.call_later(delay, seen.append, delay)
    hit = sched.run_until(lambda: len(seen) == 2)
    assert hit and seen == [10, 20] and sched.now == 20


def test_run_until_idle_respects_limit():
    sched = Scheduler()
    seen = []
    sched.call_later(10, seen.append, 1)
    sched.call_later(1000, seen.append, 2)
    sched.run_until_idle(limit_ms=100)
    assert seen == [1] and sched.now == 100
    sched.run_until_idle()
    assert seen == [1, 2]


def test_nested_spawn_is_deterministic():
    sched = Scheduler()
    order = []

    def child(name, delay):
        yield delay
        order.append(name)
        return name

    def parent():
        a = sched.spawn(child("a", 30))
        b = sched.spawn(child("b", 10))
        first = yield b
        second = yield a
        return [first, second]

    task = sched.spawn(parent())
    sched.run_until_idle()
    assert task.value == ["b", "a"]
    assert order == ["b", "a"]


def test_negative_sleep_fails_the_task():
    sched = Scheduler()

    def proc():
        yield -5

    task = sched.spawn(proc())
    sched.run_until_idle()
    assert task.done and isinstance(task.error, ValueError)


def test_identical_runs_execute_identical_event_counts():
    def build():
        sched = Scheduler()

        def proc(n):
            for _ in range(n):
                yield 7
            return sched.now

        tasks = [sched.spawn(proc(i + 1)) for i in range(5)]
        sched.run_until_idle()
        return sched.executed, [t.value for t in tasks]

    assert build() == build()
