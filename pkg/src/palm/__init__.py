"""Hierarchical model-based reinforcement learning over lifted abstract MDPs."""

from .core import (
    Action,
    ActionKind,
    ConfigurationError,
    DomainContractError,
    Environment,
    GroundState,
    InvalidActionError,
    PalmError,
    StepOutcome,
    TaskSpec,
    Terminal,
    canonical_key,
    make_rng,
    primitive_actions,
    split_rng,
    step,
)

__version__ = "0.1.0"
