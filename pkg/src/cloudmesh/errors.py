"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CloudMeshError(Exception):
    """Base class for every error raised by cloudmesh."""


# substrate
class DuplicateCloudId(CloudMeshError):
    pass


class UnknownCloud(CloudMeshError):
    pass


class UnknownNode(CloudMeshError):
    pass


class HardwareSwitchInPublicCloud(CloudMeshError):
    pass


class DifferentClouds(CloudMeshError):
    pass


class NoPath(CloudMeshError):
    pass


class InvalidScenario(CloudMeshError):
    pass


# hypervisor
class TenantSpaceExhausted(CloudMeshError):
    pass


class LocalSpaceExhausted(CloudMeshError):
    pass


class UnknownTenant(CloudMeshError):
    pass


class UnknownNetwork(CloudMeshError):
    pass


class InvalidVirtualNetwork(CloudMeshError):
    pass


class InfeasibleConstraint(CloudMeshError):
    pass


class CapacityExceeded(CloudMeshError):
    pass


class NoVirtualRoute(CloudMeshError):
    pass


# snapshot / migration
class UnknownSwitch(CloudMeshError):
    pass


class MalformedSnapshot(CloudMeshError):
    pass


class UnknownVm(CloudMeshError):
    pass


class SameCloud(CloudMeshError):
    pass


class TargetFull(CloudMeshError):
    pass


class BarrierTimeout(CloudMeshError):
    pass


class MigrationInProgress(CloudMeshError):
    pass


# simulation / bench
class TickLimitExceeded(CloudMeshError):
    pass


class UnknownEndpoint(CloudMeshError):
    pass


class InvalidSpec(CloudMeshError):
    """A bench specification failed validation."""
