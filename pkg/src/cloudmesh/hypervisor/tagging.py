"""Tenant tagging in substrate MAC addresses.

The high 16 bits of a substrate MAC carry the tenant id, the low 32 bits a
tenant-local endpoint id.  Tenants keep their own 48-bit virtual MACs; the
edge switches rewrite between the two forms.
"""

from __future__ import annotations

import heapq
from typing import NamedTuple

from cloudmesh.errors import LocalSpaceExhausted, TenantSpaceExhausted

TENANT_BITS = 16
LOCAL_BITS = 32
TENANT_LIMIT = 1 << TENANT_BITS
LOCAL_LIMIT = 1 << LOCAL_BITS
MAC_LIMIT = 1 << 48
# usable 802.1Q VLAN ids (0 and 4095 are reserved)
VLAN_TENANT_LIMIT = 4094

LLDP_MULTICAST = 0x0180C200000E


class SubstrateMac(NamedTuple):
    tenant: int
    local: int

    @property
    def value(self) -> int:
        return (self.tenant << LOCAL_BITS) | self.local

    def __str__(self) -> str:
        return mac_to_str(self.value)


def encode_mac(tenant: int, local: int) -> SubstrateMac:
    if not 0 <= tenant < TENANT_LIMIT:
        raise ValueError(f"tenant id {tenant} outside 16 bits")
    if not 0 <= local < LOCAL_LIMIT:
        raise ValueError(f"local id {local} outside 32 bits")
    return SubstrateMac(tenant, local)


def decode_mac(mac: SubstrateMac | int) -> tuple[int, int]:
    value = mac.value if isinstance(mac, SubstrateMac) else int(mac)
    if not 0 <= value < MAC_LIMIT:
        raise ValueError(f"{value:#x} is not a 48-bit MAC")
    return value >> LOCAL_BITS, value & (LOCAL_LIMIT - 1)


def mac_to_str(value: int) -> str:
    return ":".join(f"{(value >> s) & 0xFF:02x}" for s in range(40, -1, -8))


def mac_from_str(text: str) -> int:
    parts = text.strip().split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise ValueError(f"malformed MAC {text!r}")
    return int("".join(parts), 16)


def tenant_capacity_ratio() -> float:
    return TENANT_LIMIT / VLAN_TENANT_LIMIT


class TenantAllocator:
    """Hands out the smallest unused tenant id."""

    def __init__(self, limit: int = TENANT_LIMIT) -> None:
        self.limit = limit
        self._next = 0
        self._released: list[int] = []
        self._live: set[int] = set()

    def __len__(self) -> int:
        return len(self._live)

    def __contains__(self, tenant: int) -> bool:
        return tenant in self._live

    def allocate(self) -> int:
        if self._released:
            tid = heapq.heappop(self._released)
        elif self._next < self.limit:
            tid = self._next
            self._next += 1
        else:
            raise TenantSpaceExhausted(f"all {self.limit} tenant ids in use")
        self._live.add(tid)
        return tid

    def release(self, tenant: int) -> None:
        self._live.remove(tenant)
        heapq.heappush(self._released, tenant)


class LocalIdMap:
    """Per-tenant first-seen assignment of 32-bit local ids to virtual MACs."""

    def __init__(self, limit: int = LOCAL_LIMIT) -> None:
        self.limit = limit
        self._next = 0
        self._by_vmac: dict[int, int] = {}
        self._by_local: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._by_vmac)

    def get(self, vmac: int) -> int | None:
        return self._by_vmac.get(vmac)

    def vmac_of(self, local: int) -> int | None:
        return self._by_local.get(local)

    def assign(self, vmac: int) -> int:
        local = self._by_vmac.get(vmac)
        if local is not None:
            return local
        if self._next >= self.limit:
            raise LocalSpaceExhausted(f"{self.limit} local ids used")
        local = self._next
        self._next += 1
        self._by_vmac[vmac] = local
        self._by_local[local] = vmac
        return local

    def release(self, vmac: int) -> None:
        local = self._by_vmac.pop(vmac, None)
        if local is not None:
            del self._by_local[local]
