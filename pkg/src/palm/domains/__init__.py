"""Named task variants for both domains."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..core import ConfigurationError, Environment, GroundState
from . import cleanup, taxi


def variant_names() -> list[str]:
    return sorted(taxi.VARIANTS) + sorted(cleanup.layout_names())


def domain_of(name: str) -> str:
    if name in taxi.VARIANTS:
        return "taxi"
    if name in cleanup.layout_names():
        return "cleanup"
    raise ConfigurationError(f"unknown task variant {name!r}")


def is_stochastic(name: str) -> bool:
    if domain_of(name) == "taxi":
        return taxi.VARIANTS[name].stochastic
    return cleanup.load_layout(name).movement_noise > 0


def make_task(name: str, rng: np.random.Generator, discount: float = 0.95) -> tuple[Environment, GroundState]:
    """Sample an instance of the named variant."""
    if domain_of(name) == "taxi":
        return taxi.make_taxi_task(name, rng, discount)
    return cleanup.make_cleanup_task(name, rng, discount)


@dataclass(frozen=True)
class Catalog:
    """What hierarchy files may reference for a domain."""

    domain: str
    actions: tuple[str, ...]
    features: dict
    param_kinds: tuple[str, ...]
    macros: dict
    goal_feature: str


_SAMPLE_VARIANT = {"taxi": "taxi-classic-2p", "cleanup": "cleanup-2r2b1t-5x5"}


@lru_cache(maxsize=None)
def catalog(domain: str) -> Catalog:
    if domain not in _SAMPLE_VARIANT:
        raise ConfigurationError(f"unknown domain {domain!r}")
    env, _ = make_task(_SAMPLE_VARIANT[domain], np.random.default_rng(0))
    return Catalog(
        domain,
        tuple(a.id for a in env.primitive_actions()),
        {name: f.arg_kinds for name, f in env.features.items()},
        tuple(env.param_kinds),
        dict(env.macros),
        env.goal_feature,
    )


__all__ = ["variant_names", "domain_of", "is_stochastic", "make_task", "catalog", "Catalog", "taxi", "cleanup"]
