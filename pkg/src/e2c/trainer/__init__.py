"""Centralized-training loop and baseline variants."""
from .config import VARIANTS, HyperParams, Variant, get_variant
from .loop import Learners, Trainer, evaluate, train

__all__ = ["VARIANTS", "HyperParams", "Variant", "get_variant", "Learners", "Trainer", "evaluate", "train"]
