"""Explainable reinforcement-learning warfarin dosing: simulator, PPO with Action Forging, distillation."""

__version__ = "0.1.0"
