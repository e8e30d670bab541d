"""Execution backends that drive generator-based processes.

A process is a generator that yields commands:

* ``Timeout(s)``  – let ``s`` model-seconds pass (task work, overheads).
* ``Poll(s)``     – back off before re-pulling a queue. Model seconds in the
  simulator, wall seconds in the thread backend.
* ``Acquire(kind, node)`` – wait for a slot in the ledger; the granted node id
  is sent back into the generator. ``node=None`` means any node, first free
  in cluster order.

:class:`SimBackend` advances a virtual clock through a heap of events;
:class:`ThreadBackend` runs every process on its own thread and sleeps for
real. Both expose ``now()``, ``spawn()``, ``release()`` and ``run()``.
"""
from __future__ import annotations

import heapq
import itertools
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Generator

from .cluster import SlotLedger
from .kinds import TaskKind


@dataclass(frozen=True)
class Timeout:
    delay: float


@dataclass(frozen=True)
class Poll:
    interval: float


@dataclass(frozen=True)
class Acquire:
    kind: TaskKind
    node: str | None = None


Process = Generator


class SimBackend:
    """Single-threaded discrete-event loop.

    Events at the same instant run in scheduling order. Slot grants are
    deferred to a pass that runs after every other event of that instant, so
    simultaneous releases are all visible before waiters are served: waiters
    are served first-come first-served, each on the lowest-index free node.
    """

    name = "sim"

    def __init__(self, ledger: SlotLedger):
        self.ledger = ledger
        self._now = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        # (kind, node-or-None) -> FIFO of (request seq, process)
        self._waiters: dict[tuple, deque] = {}
        self._grant_pending = False
        self.live = 0
        self.events = 0

    def now(self) -> float:
        return self._now

    def _push(self, t: float, prio: int, item) -> None:
        heapq.heappush(self._heap, (t, prio, next(self._seq), item))

    def spawn(self, proc: Process, delay: float = 0.0) -> Process:
        self.live += 1
        self._push(self._now + delay, 0, (proc, None))
        return proc

    def release(self, node_id: str, kind: TaskKind) -> None:
        self.ledger.release(node_id, kind)
        self._request_grants()

    def _request_grants(self) -> None:
        if self._waiters and not self._grant_pending:
            self._grant_pending = True
            self._push(self._now, 1, None)

    def _grant_pass(self) -> None:
        self._grant_pending = False
        # serve queues in order of their oldest request; FIFO within a queue
        for key in sorted(self._waiters, key=lambda k: self._waiters[k][0][0]):
            kind, node = key
            fifo = self._waiters[key]
            while fifo:
                got = (self.ledger.try_acquire(node, kind) and node) if node \
                    else self.ledger.try_acquire_any(kind)
                if not got:
                    break
                _, proc = fifo.popleft()
                self._push(self._now, 0, (proc, got))
            if not fifo:
                del self._waiters[key]

    def _step(self, proc: Process, value) -> None:
        try:
            cmd = proc.send(value)
        except StopIteration:
            self.live -= 1
            return
        if isinstance(cmd, Timeout):
            self._push(self._now + max(0.0, cmd.delay), 0, (proc, None))
        elif isinstance(cmd, Poll):
            self._push(self._now + max(0.0, cmd.interval), 0, (proc, None))
        elif isinstance(cmd, Acquire):
            self._waiters.setdefault((cmd.kind, cmd.node), deque()).append((next(self._seq), proc))
            self._request_grants()
        else:
            raise TypeError(f"process yielded unsupported command {cmd!r}")

    def run(self, until: float | None = None) -> float:
        while self._heap:
            t, prio, _, item = self._heap[0]
            if until is not None and t > until:
                break
            heapq.heappop(self._heap)
            self._now = t
            self.events += 1
            if item is None:
                self._grant_pass()
            else:
                self._step(*item)
        if self._waiters and until is None:
            stuck = ", ".join(f"{k.value}@{n or 'any'}" for k, n in self._waiters)
            raise RuntimeError(f"simulation deadlocked with pending slot requests: {stuck}")
        return self._now


class ThreadBackend:
    """Runs each process on its own thread against the wall clock.

    ``Timeout`` delays are scaled by ``time_scale`` (model seconds to wall
    seconds) and ``now()`` reports model seconds since construction.
    """

    name = "realtime"

    def __init__(self, ledger: SlotLedger, time_scale: float = 1e-3, acquire_timeout: float = 60.0):
        if not time_scale > 0:
            raise ValueError("time_scale must be positive")
        self.ledger = ledger
        self.time_scale = time_scale
        self.acquire_timeout = acquire_timeout
        self._t0 = time.monotonic()
        self._threads: list[threading.Thread] = []
        self._errors: list[BaseException] = []
        self._lock = threading.Lock()

    def now(self) -> float:
        return (time.monotonic() - self._t0) / self.time_scale

    def _drive(self, proc: Process, delay: float) -> None:
        try:
            if delay > 0:
                time.sleep(delay * self.time_scale)
            value = None
            while True:
                try:
                    cmd = proc.send(value)
                except StopIteration:
                    return
                value = None
                if isinstance(cmd, Timeout):
                    time.sleep(max(0.0, cmd.delay) * self.time_scale)
                elif isinstance(cmd, Poll):
                    time.sleep(max(0.0, cmd.interval))
                elif isinstance(cmd, Acquire):
                    value = self.ledger.acquire(cmd.kind, cmd.node, timeout=self.acquire_timeout)
                else:
                    raise TypeError(f"process yielded unsupported command {cmd!r}")
        except BaseException as exc:  # surfaced by run()
            with self._lock:
                self._errors.append(exc)

    def spawn(self, proc: Process, delay: float = 0.0) -> Process:
        th = threading.Thread(target=self._drive, args=(proc, delay), daemon=True)
        with self._lock:
            self._threads.append(th)
        th.start()
        return proc

    def release(self, node_id: str, kind: TaskKind) -> None:
        self.ledger.release(node_id, kind)

    def run(self, until: float | None = None) -> float:
        joined = 0
        while True:
            with self._lock:
                pending = self._threads[joined:]
            if not pending:
                break
            for th in pending:
                th.join()
            joined += len(pending)
        if self._errors:
            raise self._errors[0]
        return self.now()


def make_backend(name: str, ledger: SlotLedger, time_scale: float = 1e-3):
    if name in ("sim", "simulated"):
        return SimBackend(ledger)
    if name in ("realtime", "real", "threads"):
        return ThreadBackend(ledger, time_scale=time_scale)
    raise ValueError(f"unknown backend {name!r} (expected sim or realtime)")
