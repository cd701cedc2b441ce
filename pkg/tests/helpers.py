"""Shared generators and small oracles used across test modules."""

from __future__ import annotations

import random

from modelsink import wire
from modelsink.chasing_queue import ChasingQueue, SharedCounterQueue


def random_uid(rng: random.Random) -> bytes:
    return rng.randbytes(16)


def random_text(rng: random.Random, max_len: int = 24) -> str:
    alphabet = "abcdefghijklmnopqrstuvwxyz_."
    return "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, max_len)))


def random_record(rng: random.Random) -> wire.EventRecord:
    return wire.EventRecord(
        target_local_event="ev_" + (random_text(rng, 12) or "x"),
        safety_field=random_text(rng, 16),
        origin_uid=random_uid(rng),
        origin_sequence=rng.randrange(0, 2**63),
    )


def queue_schedule_trial(seed: int, max_messages: int = 10_000) -> dict:
    """One randomized interleaving of producers and consumers, run step-for-step
    against the sequential shared-counter oracle. Returns trial stats; raises
    AssertionError on the first divergence."""
    rng = random.Random(seed)
    n_producers = rng.randint(1, 4)
    n_consumers = rng.randint(1, 8)
    total = rng.randint(1, max_messages)
    consumers = tuple(f"c{i}" for i in range(n_consumers))
    q = ChasingQueue(consumers, capacity=total + 1)
    ref = SharedCounterQueue(consumers, capacity=total + 1)

    counts = [0] * n_producers
    quota = [total // n_producers] * n_producers
    for i in range(total % n_producers):
        quota[i] += 1
    received = {c: [] for c in consumers}
    expected = {c: [] for c in consumers}
    remaining_producers = [i for i in range(n_producers) if quota[i]]
    step = 0
    while remaining_producers or any(len(received[c]) < total for c in consumers):
        lagging = [c for c in consumers if len(received[c]) < total]
        pick = rng.randrange(len(remaining_producers) + len(lagging))
        if pick < len(remaining_producers):
            p = remaining_producers[pick]
            value = b"%d:%d" % (p, counts[p])
            counts[p] += 1
            assert q.push(value) == ref.push(value)
            if counts[p] == quota[p]:
                remaining_producers.remove(p)
        else:
            c = lagging[pick - len(remaining_producers)]
            got = q.poll(c)
            want = ref.poll(c)
            assert got == want, f"seed {seed}: {c} got {got!r}, oracle {want!r}"
            if got is not None:
                received[c].append(got)
                expected[c].append(want)
        step += 1
        if step % 64 == 0:
            assert q.depth() == ref.depth(), f"seed {seed}: depth diverged"

    for c in consumers:
        assert received[c] == expected[c]
        assert len(received[c]) == total
        assert len(set(received[c])) == total  # no duplicates
    first = received[consumers[0]]
    for c in consumers[1:]:
        assert received[c] == first  # total-order agreement
    assert q.depth() == 0 and ref.depth() == 0
    return {"producers": n_producers, "consumers": n_consumers, "messages": total}


def random_message(rng: random.Random, max_records: int = 4) -> wire.SyncMessage:
    msg_type = rng.choice((wire.MSG_EVENT, wire.MSG_PING,
                           wire.MSG_POLL_REQ, wire.MSG_POLL_RESP))
    records = ()
    event_name = ""
    safety = ""
    sequence = 0
    if msg_type == wire.MSG_EVENT:
        event_name = "ev_" + (random_text(rng, 16) or "x")
        safety = random_text(rng, 16)
        sequence = rng.randrange(1, 2**63)
    elif msg_type == wire.MSG_POLL_RESP:
        records = tuple(random_record(rng) for _ in range(rng.randrange(0, max_records + 1)))
    return wire.SyncMessage(
        msg_type=msg_type,
        model_uid=random_uid(rng),
        sequence=sequence,
        timestamp_ms=rng.randrange(0, 2**48),
        safety_field=safety,
        event_name=event_name,
        records=records,
    )
