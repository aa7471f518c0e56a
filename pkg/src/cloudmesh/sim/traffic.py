"""Traffic generators: ping, fluid-ish streams, LLDP probes and isolation fuzz."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Any, Optional

from cloudmesh.errors import UnknownEndpoint
from cloudmesh.hypervisor.core import VmRef
from cloudmesh.sim.engine import Engine, GeneratorStats


def ping_schedule(count: int, interval: int, start: int = 0) -> list[int]:
    """Ticks at which the echo requests of one ping run are sent."""
    return [start + i * interval for i in range(count)]


def stream_schedule(rate: int, duration: int, packet_size: int, start: int = 0) -> list[tuple[int, int]]:
    """(tick, packets) pairs emitting ``rate`` bytes per tick on average."""
    out = []
    for k in range(duration):
        n = ((k + 1) * rate) // packet_size - (k * rate) // packet_size
        if n:
            out.append((start + k, n))
    return out


def _same_network(engine: Engine, src: VmRef, dst: VmRef) -> None:
    engine.vm(src)
    engine.vm(dst)
    if src[:2] != dst[:2]:
        raise UnknownEndpoint(f"{dst} is not in the network of {src}")


def ping_generator(
    engine: Engine, src: VmRef, dst: VmRef, count: int, interval: int, start: int = 0, size: int = 64
) -> int:
    _same_network(engine, src, dst)
    gid = engine.new_generator("ping")
    dst_mac = engine.vm(dst).vmac
    for i, tick in enumerate(ping_schedule(count, interval, start)):
        engine.inject(src, dst_mac, at=tick, size=size, kind="echo_request", generator=gid, seq_no=i)
    return gid


def stream_generator(
    engine: Engine,
    src: VmRef,
    dst: VmRef,
    rate: int,
    duration: int,
    start: int = 0,
    packet_size: int = 100,
) -> int:
    _same_network(engine, src, dst)
    gid = engine.new_generator("stream")
    dst_mac = engine.vm(dst).vmac
    seq = 0
    for tick, n in stream_schedule(rate, duration, packet_size, start):
        for _ in range(n):
            engine.inject(src, dst_mac, at=tick, size=packet_size, generator=gid, seq_no=seq)
            seq += 1
    return gid


def fuzz_generator(
    engine: Engine, rng: random.Random, count: int, start: int = 0, spacing: int = 1, size: int = 64
) -> int:
    """Random packets between random endpoints, addressed from the pooled MAC space.

    Every tenant's virtual MACs go into one pool, so with overlapping address
    plans most draws name a MAC that exists in several tenants at once.
    """
    gid = engine.new_generator("fuzz")
    endpoints = sorted(engine.vms)
    pool = sorted({engine.vms[e].vmac for e in endpoints})
    pool.extend(rng.randrange(1, 1 << 47) for _ in range(max(1, len(pool) // 8)))
    for i in range(count):
        src = endpoints[rng.randrange(len(endpoints))]
        dst = pool[rng.randrange(len(pool))]
        engine.inject(src, dst, at=start + i * spacing, size=size, generator=gid, seq_no=i)
    return gid


@dataclass(frozen=True)
class PingSummary:
    sent: int
    received: int
    rtt: tuple[int, ...]
    one_way_steady: tuple[int, ...]  # requests that never detoured through the controller

    def to_dict(self) -> dict[str, Any]:
        return {
            "sent": self.sent,
            "received": self.received,
            "rtt": list(self.rtt),
            "one_way_steady": list(self.one_way_steady),
        }


def ping_summary(stats: GeneratorStats) -> PingSummary:
    steady = tuple(lat for lat, detoured, _ in stats.one_way if not detoured)
    return PingSummary(stats.sent, stats.received, tuple(stats.rtt), steady)


def throughput(stats: GeneratorStats, duration: int) -> float:
    """Bytes per tick delivered over ``duration`` ticks from the first delivery."""
    if not stats.deliveries or duration <= 0:
        return 0.0
    first = stats.deliveries[0][0]
    total = sum(b for t, b in stats.deliveries if t < first + duration)
    return total / duration


def steady_latency(stats: GeneratorStats) -> Optional[int]:
    """Most common one-way latency among requests that found their rules installed.

    Ties go to the smaller value.  None when no request qualifies.
    """
    values = ping_summary(stats).one_way_steady
    if not values:
        return None
    counts = Counter(values)
    return min(counts, key=lambda v: (-counts[v], v))


def steady_by_seq(stats: GeneratorStats) -> dict[int, int]:
    """seq_no -> one-way latency for requests that never detoured through the controller."""
    return {seq: lat for lat, detoured, seq in stats.one_way if not detoured}
