"""Blaster-style multi-step worm lab: simulate, emit logs, reconstruct."""

__version__ = "0.1.0"
