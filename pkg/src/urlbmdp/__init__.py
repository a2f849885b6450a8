"""Exploration in block MDPs by decoding observations with unsupervised learners.

Submodules:

- ``latent``: latent MDPs, tabular policies, value iteration, trajectories
- ``lock``: the combination-lock environments
- ``ulo``: k-means / Gaussian-mixture decoders
- ``learners``: OracleQ and epsilon-greedy Q-learning
- ``framework``: trajectory sampling, label matching and the outer loop
- ``harness``: configs, seeded replicates, CSV/plot output and the CLI
"""

from .errors import (
    ConfigError,
    ContractViolation,
    DecodingRangeError,
    InsufficientDataError,
    SequencingError,
)
from .framework import LabelBank, TsrMemory, UrlParams, UrlRun, evaluate_policy, select_best, tsr, url_train
from .latent import LatentMdp, ObsPolicy, TabularPolicy, Trajectory, compose_policy, policy_value, value_iteration
from .learners import EpsGreedyQ, OracleQ
from .lock import LockEnv, LockSpec
from .ulo import UloConfig, fit_ulo

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractViolation", "DecodingRangeError", "InsufficientDataError",
    "SequencingError", "LabelBank", "TsrMemory", "UrlParams", "UrlRun", "evaluate_policy",
    "select_best", "tsr", "url_train", "LatentMdp", "ObsPolicy", "TabularPolicy", "Trajectory",
    "compose_policy", "policy_value", "value_iteration", "EpsGreedyQ", "OracleQ", "LockEnv",
    "LockSpec", "UloConfig", "fit_ulo",
]
