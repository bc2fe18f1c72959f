"""Multimodal actor-critic RL with modality alignment and importance enhancement."""

__version__ = "0.1.0"
