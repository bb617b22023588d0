"""Hybrid architecture distillation for DNA sequence models."""

__version__ = "0.1.0"
