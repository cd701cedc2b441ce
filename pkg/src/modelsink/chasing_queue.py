"""Broadcast FIFO queues for fanning one event stream out to every consumer.

ChasingQueue is a linked list of cells, each carrying one delivery flag per
consumer. Consumers chase the producers: each consumer keeps a private
cursor, polls only its own flag, and clears it on retrieval, so consumers
never contend with each other. A cell is reclaimed once every flag is
cleared, at which point the head of the queue is advanced. There is no
shared read counter on the hot path; the only locks serialize producers
against each other and guard head advancement, and a poller never blocks on
them.

SharedCounterQueue is the classic single-lock, shared-counter formulation of
the same contract. It is the correctness oracle for randomized equivalence
tests and the baseline for benchmarks.

Concurrency contract for both: any number of producers, at most one polling
context per consumer id. depth() may be approximate while threads are in
flight but is exact at quiescence.
"""

from __future__ import annotations

import threading
from typing import Any, Hashable, Iterable

DEFAULT_CAPACITY = 65536


class QueueError(Exception):
    pass


class EmptyConsumerSet(QueueError):
    pass


class UnknownConsumer(QueueError):
    pass


class QueueFull(QueueError):
    """Backpressure signal: capacity reached even after reclaiming the head."""


class _Cell:
    __slots__ = ("value", "index", "flags", "next")

    def __init__(self, value: Any, index: int, flags: list[bool]):
        self.value = value
        self.index = index
        self.flags = flags
        self.next: _Cell | None = None


class ChasingQueue:
    def __init__(self, consumer_ids: Iterable[Hashable], capacity: int = DEFAULT_CAPACITY):
        slots = {cid: i for i, cid in enumerate(consumer_ids)}
        if not slots:
            raise EmptyConsumerSet("a broadcast queue needs at least one consumer")
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._slots = slots
        self._capacity = capacity
        sentinel = _Cell(None, -1, [])
        self._head = sentinel          # last reclaimed (or sentinel) cell
        self._tail = sentinel
        self._cursors: dict[Hashable, _Cell] = {cid: sentinel for cid in slots}
        self._pushed = 0
        self._reclaimed = 0
        self._push_lock = threading.Lock()
        self._reclaim_lock = threading.Lock()

    @property
    def consumer_ids(self) -> tuple[Hashable, ...]:
        return tuple(self._slots)

    def push(self, value: Any) -> int:
        """Append for every consumer; returns the cell's monotone enqueue index."""
        with self._push_lock:
            self._reclaim(blocking=True)
            if self._pushed - self._reclaimed >= self._capacity:
                raise QueueFull(f"queue holds {self._capacity} undelivered cells")
            cell = _Cell(value, self._pushed, [True] * len(self._slots))
            self._tail.next = cell
            self._tail = cell
            self._pushed += 1
            return cell.index

    def poll(self, consumer_id: Hashable) -> Any:
        """Oldest value still flagged for this consumer, or None; clears the flag."""
        slot = self._slot(consumer_id)
        cell = self._cursors[consumer_id].next
        if cell is None:
            self._reclaim(blocking=False)
            return None
        value = cell.value
        cell.flags[slot] = False
        self._cursors[consumer_id] = cell
        self._reclaim(blocking=False)
        return value

    def peek(self, consumer_id: Hashable) -> Any:
        """The value poll() would return, without consuming it."""
        self._slot(consumer_id)
        cell = self._cursors[consumer_id].next
        return None if cell is None else cell.value

    def depth(self) -> int:
        return self._pushed - self._reclaimed

    def _slot(self, consumer_id: Hashable) -> int:
        try:
            return self._slots[consumer_id]
        except KeyError:
            raise UnknownConsumer(f"consumer {consumer_id!r} is not registered") from None

    def _reclaim(self, blocking: bool) -> None:
        # Pollers must not wait on each other, so they skip when contended;
        # the next push or poll finishes the job. Push reclaims before
        # admitting new cells against capacity, so it blocks briefly.
        if not self._reclaim_lock.acquire(blocking=blocking):
            return
        try:
            cell = self._head.next
            while cell is not None and not any(cell.flags):
                cell.value = None  # release the payload before dropping the cell
                self._head = cell
                self._reclaimed += 1
                cell = cell.next
        finally:
            self._reclaim_lock.release()


class SharedCounterQueue:
    """Reference broadcast queue: one lock, one list, per-consumer read counters."""

    def __init__(self, consumer_ids: Iterable[Hashable], capacity: int = DEFAULT_CAPACITY):
        self._read = {cid: 0 for cid in consumer_ids}
        if not self._read:
            raise EmptyConsumerSet("a broadcast queue needs at least one consumer")
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self._capacity = capacity
        self._items: list[Any] = []
        self._base = 0  # enqueue index of items[0]
        self._lock = threading.Lock()

    def push(self, value: Any) -> int:
        with self._lock:
            if len(self._items) >= self._capacity:
                raise QueueFull(f"queue holds {self._capacity} undelivered cells")
            self._items.append(value)
            return self._base + len(self._items) - 1

    def poll(self, consumer_id: Hashable) -> Any:
        with self._lock:
            if consumer_id not in self._read:
                raise UnknownConsumer(f"consumer {consumer_id!r} is not registered")
            pos = self._read[consumer_id]
            if pos - self._base >= len(self._items):
                return None
            value = self._items[pos - self._base]
            self._read[consumer_id] = pos + 1
            low = min(self._read.values())
            if low > self._base:
                del self._items[:low - self._base]
                self._base = low
            return value

    def peek(self, consumer_id: Hashable) -> Any:
        with self._lock:
            if consumer_id not in self._read:
                raise UnknownConsumer(f"consumer {consumer_id!r} is not registered")
            pos = self._read[consumer_id]
            if pos - self._base >= len(self._items):
                return None
            return self._items[pos - self._base]

    def depth(self) -> int:
        with self._lock:
            return len(self._items)
