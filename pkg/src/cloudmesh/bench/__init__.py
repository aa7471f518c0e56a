"""Benchmarks, acceptance checks and the command-line front end."""
