"""Deterministic discrete-event scheduler.

All engine latencies (perception, responder backends, tool calls) are charged
to this scheduler, so latency assertions are exact rather than flaky. Virtual
mode jumps straight to the next due timestamp; wall mode sleeps until events
come due and accepts cross-thread injection, which is how the live service
runs the same engine code in real time.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Any, Callable, Generator

__all__ = ["Scheduler", "Signal", "Task", "SimTimeout"]


class SimTimeout(Exception):
    """A guarded wait exceeded its deadline."""


class Signal:
    """One-shot completion cell that processes can wait on."""

    __slots__ = ("_sched", "name", "done", "value", "error", "_callbacks")

    def __init__(self, sched: "Scheduler", name: str = ""):
        self._sched = sched
        self.name = name
        self.done = False
        self.value: Any = None
        self.error: BaseException | None = None
        self._callbacks: list[Callable[["Signal"], None]] = []

    def succeed(self, value: Any = None) -> None:
        self._finish(value, None)

    def fail(self, error: BaseException) -> None:
        self._finish(None, error)

    def _finish(self, value: Any, error: BaseException | None) -> None:
        if self.done:
            return
        self.done = True
        self.value = value
        self.error = error
        callbacks, self._callbacks = self._callbacks, []
        # Callbacks run as their own scheduled events so the heap defines a
        # single total order for everything that happens in the simulation.
        for cb in callbacks:
            self._sched.call_later(0.0, cb, self)

    def on_done(self, cb: Callable[["Signal"], None]) -> None:
        if self.done:
            self._sched.call_later(0.0, cb, self)
        else:
            self._callbacks.append(cb)


class Task(Signal):
    """A generator-driven process.

    The generator may yield a non-negative number (sleep that many virtual
    milliseconds) or a Signal (resume when it completes; a failed signal's
    error is thrown into the generator). The task completes with the
    generator's return value, or fails with its uncaught exception.
    """

    __slots__ = ("_gen",)

    def __init__(self, sched: "Scheduler", gen: Generator, name: str = ""):
        super().__init__(sched, name)
        self._gen = gen
        sched.call_later(0.0, self._step, None, None)

    def _step(self, send_value: Any, throw_error: BaseException | None) -> None:
        if self.done:
            return
        try:
            if throw_error is not None:
                cmd = self._gen.throw(throw_error)
            else:
                cmd = self._gen.send(send_value)
        except StopIteration as stop:
            self.succeed(stop.value)
            return
        except Exception as exc:
            self.fail(exc)
            return
        if isinstance(cmd, (int, float)):
            if cmd < 0:
                self.fail(ValueError(f"negative sleep: {cmd}"))
                return
            self._sched.call_later(float(cmd), self._step, None, None)
        elif isinstance(cmd, Signal):
            cmd.on_done(self._resume)
        else:
            self.fail(TypeError(f"process yielded {type(cmd).__name__}; expected delay or Signal"))

    def _resume(self, sig: Signal) -> None:
        if sig.error is not None:
            self._step(None, sig.error)
        else:
            self._step(sig.value, None)


class Scheduler:
    """Priority-queue event loop over virtual milliseconds."""

    def __init__(self, start_ms: float = 0.0, wall: bool = False):
        self._now = float(start_ms)
        self._heap: list[list] = []  # [due, tick, fn, args, alive]
        self._tick = itertools.count()
        self._wall = wall
        self._cond = threading.Condition()
        self._anchor_wall: float | None = None
        self._anchor_virtual = float(start_ms)
        self.executed = 0

    @property
    def now(self) -> float:
        return self._now

    def wall_now(self) -> float:
        """Virtual-time equivalent of the current wall instant (wall mode)."""
        if self._anchor_wall is None:
            return self._now
        return self._anchor_virtual + (time.monotonic() - self._anchor_wall) * 1000.0

    # -- scheduling ---------------------------------------------------------

    def call_at(self, due: float, fn: Callable, *args) -> list:
        base = self._now
        if self._wall:
            base = max(base, self.wall_now())
        entry = [max(float(due), base), next(self._tick), fn, args, True]
        with self._cond:
            heapq.heappush(self._heap, entry)
            self._cond.notify_all()
        return entry

    def call_later(self, delay: float, fn: Callable, *args) -> list:
        base = max(self._now, self.wall_now()) if self._wall else self._now
        return self.call_at(base + float(delay), fn, *args)

    @staticmethod
    def cancel(handle: list) -> None:
        handle[4] = False

    # -- process/event helpers ----------------------------------------------

    def spawn(self, gen: Generator, name: str = "") -> Task:
        return Task(self, gen, name)

    def signal(self, name: str = "") -> Signal:
        return Signal(self, name)

    def timer(self, delay: float) -> Signal:
        sig = Signal(self, f"timer+{delay}")
        self.call_later(delay, sig.succeed)
        return sig

    def never(self) -> Signal:
        """A signal that never completes (simulated stall)."""
        return Signal(self, "never")

    def guard(self, inner: Signal, timeout_ms: float) -> Signal:
        """Wrap a signal with a deadline; fails with SimTimeout when it fires first."""
        out = Signal(self, f"guard({inner.name})")
        handle = self.call_later(
            timeout_ms, lambda: out.fail(SimTimeout(f"timed out after {timeout_ms} ms"))
        )

        def _propagate(sig: Signal) -> None:
            self.cancel(handle)
            if sig.error is not None:
                out.fail(sig.error)
            else:
                out.succeed(sig.value)

        inner.on_done(_propagate)
        return out

    # -- virtual drive --------------------------------------------------------

    def _pop(self) -> list | None:
        while self._heap:
            entry = heapq.heappop(self._heap)
            if entry[4]:
                return entry
        return None

    def run_until_idle(self, limit_ms: float | None = None) -> float:
        """Execute events in due order until the heap drains (or limit passes)."""
        while True:
            entry = self._pop()
            if entry is None:
                return self._now
            due, _, fn, args, _ = entry
            if limit_ms is not None and due > limit_ms:
                heapq.heappush(self._heap, entry)
                self._now = limit_ms
                return self._now
            self._now = due
            self.executed += 1
            fn(*args)

    def run_until(self, cond: Callable[[], bool], limit_ms: float | None = None) -> bool:
        """Execute events until cond() holds; returns whether it does."""
        if cond():
            return True
        while True:
            entry = self._pop()
            if entry is None:
                return cond()
            due, _, fn, args, _ = entry
            if limit_ms is not None and due > limit_ms:
                heapq.heappush(self._heap, entry)
                self._now = limit_ms
                return cond()
            self._now = due
            self.executed += 1
            fn(*args)
            if cond():
                return True

    # -- wall-clock drive (live service) --------------------------------------

    def post(self, fn: Callable, *args) -> None:
        """Thread-safe immediate scheduling from outside the pump thread."""
        self.call_at(self.wall_now(), fn, *args)

    def pump(self, stop: threading.Event, idle_wait_s: float = 0.05) -> None:
        """Run events as they come due on the wall clock, until stop is set."""
        with self._cond:
            self._anchor_wall = time.monotonic()
            self._anchor_virtual = self._now
        while not stop.is_set():
            with self._cond:
                while self._heap and not self._heap[0][4]:
                    heapq.heappop(self._heap)
                if not self._heap:
                    self._cond.wait(idle_wait_s)
                    continue
                due = self._heap[0][0]
                delay_s = (due - self.wall_now()) / 1000.0
                if delay_s > 0:
                    self._cond.wait(min(delay_s, idle_wait_s))
                    continue
                entry = heapq.heappop(self._heap)
                self._now = max(self._now, entry[0])
            if entry[4]:
                self.executed += 1
                entry[2](*entry[3])
