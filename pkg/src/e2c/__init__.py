"""Constrained multi-agent PPO with observation-entropy exploration bonuses."""

__version__ = "0.1.0"
