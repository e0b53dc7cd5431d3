"""Reinforcement-learning trainer for electric taxi charging policies.

Talks to a running fleet simulator over its line-delimited JSON protocol,
optimizes the charging controller with proximal policy optimization, and
writes the result in the simulator's portable weight-file format. The
simulator is never imported; the wire protocol and the weight format are
the entire integration surface.
"""

from .client import EnvClient, TransportError
from .net import PolicyMeanNet, export_weights, export_weights_binary
from .ppo import HYPERPARAMETERS, TrainSpec, evaluate, train

__all__ = [
    "EnvClient",
    "TransportError",
    "PolicyMeanNet",
    "export_weights",
    "export_weights_binary",
    "HYPERPARAMETERS",
    "TrainSpec",
    "evaluate",
    "train",
]
