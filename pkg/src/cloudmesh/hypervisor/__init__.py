"""Network hypervisor: tenant tagging, embedding, reactive translation, LLDP interception."""

from cloudmesh.hypervisor.core import (
    FlowRecord,
    Hypervisor,
    LldpEvent,
    LldpReply,
    LldpResponsePlan,
    PacketInEvent,
    RuleInstall,
    StepCounter,
    TopologyView,
    VmRef,
    find_substrate_leaks,
    vm_port,
)
from cloudmesh.hypervisor.tagging import (
    TENANT_LIMIT,
    VLAN_TENANT_LIMIT,
    SubstrateMac,
    TenantAllocator,
    decode_mac,
    encode_mac,
    mac_from_str,
    mac_to_str,
)
from cloudmesh.hypervisor.vnet import Embedding, VirtualLink, VirtualNetworkSpec, VirtualNode

__all__ = [
    "Embedding",
    "FlowRecord",
    "Hypervisor",
    "LldpEvent",
    "LldpReply",
    "LldpResponsePlan",
    "PacketInEvent",
    "RuleInstall",
    "StepCounter",
    "SubstrateMac",
    "TENANT_LIMIT",
    "TenantAllocator",
    "TopologyView",
    "VLAN_TENANT_LIMIT",
    "VirtualLink",
    "VirtualNetworkSpec",
    "VirtualNode",
    "VmRef",
    "decode_mac",
    "encode_mac",
    "find_substrate_leaks",
    "mac_from_str",
    "mac_to_str",
    "vm_port",
]
