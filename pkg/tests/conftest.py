import numpy as np
import pytest

from palm.core import GroundState, split_rng
from palm.domains import make_task


def task(variant: str, seed: int = 0):
    """Instance and learner rng for a seeded trial, as the harness draws them."""
    task_rng, env_rng = split_rng(seed, 2)
    env, s0 = make_task(variant, task_rng)
    return env, s0, env_rng


def taxi_state(env, taxi, passenger_at, goal, in_taxi=False, armed=False):
    """A single-passenger taxi state; ``passenger_at`` is a depot id or an (x, y) cell."""
    objects = {d: dict(env.initial_state()[d]) for d in env.depots}
    px, py = env.depots[passenger_at] if isinstance(passenger_at, str) else passenger_at
    if in_taxi:
        px, py = taxi
    objects["p1"] = {"x": px, "y": py, "in_taxi": in_taxi, "goal": goal, "armed": armed}
    objects["taxi"] = {"x": taxi[0], "y": taxi[1]}
    return GroundState(objects)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def model_from_mdp(mdp, gamma=0.95, value_max=20.0):
    """A frozen model whose predictions are exactly the MDP's dynamics.

    Counts are set to the probabilities themselves (n(s,a) = 1), so the
    empirical estimate reproduces them without rounding.
    """
    from palm.rmax import TabularModel

    model = TabularModel("M", "sig", 1, gamma, value_max)
    for i in range(len(mdp.states)):
        if mdp.terminal[i]:
            continue
        for ai, a in enumerate(mdp.actions):
            key = ((i,), a)
            succ = np.flatnonzero(mdp.P[i, ai])
            model.n_sa[key] = 1.0
            model.n_sas[key] = {(int(j),): float(mdp.P[i, ai, j]) for j in succ}
            model.reward_sum[key] = {(int(j),): float(mdp.P[i, ai, j] * mdp.R[i, ai, j]) for j in succ}
    return model.freeze()
