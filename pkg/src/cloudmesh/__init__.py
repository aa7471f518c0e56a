"""Multi-cloud SDN network hypervisor over a deterministic simulated substrate."""

__version__ = "0.1.0"
