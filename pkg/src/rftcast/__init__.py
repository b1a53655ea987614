"""Reinforcement finetuning of probabilistic patch forecasters."""

__version__ = "0.1.0"
