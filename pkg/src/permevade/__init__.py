"""Reinforcement-learning evasion attacks on permission-based Android malware detectors."""

__version__ = "0.1.0"
