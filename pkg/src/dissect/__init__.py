"""Adversarial-input detection from the topology of induced activation graphs."""

__version__ = "0.1.0"
