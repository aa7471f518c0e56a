"""Discrete-event simulation of the substrate and control channel."""
