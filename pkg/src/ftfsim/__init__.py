"""Fluxonium-transmon-fluxonium CZ gate simulator."""

__version__ = "0.1.0"
