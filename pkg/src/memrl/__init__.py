"""Off-policy meta-RL with long/short replay-memory sampling strategies."""

from . import analysis, autodiff, envs, nn, oracle, replay, sac
from .pearl import PearlAgent
from .varibad import VaribadAgent

__all__ = [
    "analysis",
    "autodiff",
    "envs",
    "nn",
    "oracle",
    "replay",
    "sac",
    "PearlAgent",
    "VaribadAgent",
]
