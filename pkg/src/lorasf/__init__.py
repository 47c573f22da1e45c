"""Spreading-factor allocation and capacity analysis for LoRaWAN cells."""

__version__ = "0.1.0"
