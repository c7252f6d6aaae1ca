"""Phasor-domain simulator for series compensators, distance relays and their coordination."""
__version__ = "0.1.0"
