import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palm.core import ConfigurationError, Terminal
from palm.domains import make_task
from palm.domains.taxi import VARIANTS, TaxiVariant, make_taxi_task
from palm.oracles import enumerate_mdp

from conftest import task, taxi_state


def test_variant_shapes():
    small, s, _ = task("taxi-small")
    assert (small.width, small.height) == (1, 5) and not small.variant.stochastic
    assert len(small.passenger_ids) == 1
    classic, _, _ = task("taxi-classic")
    assert (classic.width, classic.height) == (5, 5) and len(classic.depots) == 4
    assert classic.variant.movement_noise == 0.2 and classic.variant.fickle_probability == 0.3
    large, _, _ = task("taxi-large")
    assert (large.width, large.height) == (20, 20) and len(large.passenger_ids) == 1
    two, _, _ = task("taxi-classic-2p")
    assert len(two.passenger_ids) == 2


def test_deterministic_variants_have_exactly_zero_noise():
    for name in ("taxi-small", "taxi-large", "taxi-classic-deterministic"):
        v = VARIANTS[name]
        assert v.movement_noise == 0.0 and v.fickle_probability == 0.0


def test_classic_depots_and_walls():
    env, _, _ = task("taxi-classic")
    assert env.depots == {"R": (0, 4), "G": (4, 4), "Y": (0, 0), "B": (3, 0)}
    assert env.blocked(1, 4, "east") and env.blocked(2, 4, "west")
    assert env.blocked(0, 0, "east") and env.blocked(2, 1, "east")
    assert not env.blocked(1, 2, "east")


def test_task_sampling_rules():
    for seed in range(30):
        env, s0 = make_task("taxi-classic-2p", np.random.default_rng(seed))
        for p in env.passenger_ids:
            at = (s0[p]["x"], s0[p]["y"])
            assert at in env.depot_at and env.depot_at[at] != s0[p]["goal"]
            assert not s0[p]["in_taxi"]


def test_too_many_passengers_is_a_configuration_error():
    with pytest.raises(ConfigurationError):
        make_taxi_task(TaxiVariant((5, 5), 5), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        make_taxi_task("taxi-huge", np.random.default_rng(0))


def test_pickup_putdown_rules(rng):
    env, _, _ = task("taxi-classic-deterministic")
    s = taxi_state(env, (1, 1), "R", "G")
    illegal = env.step(s, "pickup", rng)
    assert illegal.next_state == s and illegal.reward == -10.0
    assert env.step(s, "putdown", rng).reward == -10.0
    at_r = taxi_state(env, (0, 4), "R", "G")
    picked = env.step(at_r, "pickup", rng).next_state
    assert picked["p1"]["in_taxi"]
    wrong = env.step(picked, "putdown", rng)
    assert wrong.terminal is Terminal.NONE and wrong.reward == -1.0 and not wrong.next_state["p1"]["in_taxi"]
    at_g = taxi_state(env, (4, 4), "R", "G", in_taxi=True)
    done = env.step(at_g, "putdown", rng)
    assert done.terminal is Terminal.GOAL and done.reward == 20.0 and env.is_goal(done.next_state)


def test_putdown_between_depots_is_illegal(rng):
    env, _, _ = task("taxi-classic-deterministic")
    s = taxi_state(env, (2, 2), "R", "G", in_taxi=True)
    out = env.step(s, "putdown", rng)
    assert out.next_state == s and out.reward == -10.0


def test_noise_declares_perpendicular_slips():
    env, _, _ = task("taxi-classic")
    s = taxi_state(env, (2, 2), "R", "G")
    dist = {(o.next_state["taxi"]["x"], o.next_state["taxi"]["y"]): p for p, o in env.outcomes(s, "north")}
    assert dist == pytest.approx({(2, 3): 0.8, (3, 2): 0.1, (1, 2): 0.1})


def _frequency(env, s, action, predicate, n, seed):
    r = np.random.default_rng(seed)
    return sum(predicate(env.step(s, action, r).next_state) for _ in range(n)) / n


def test_movement_noise_monte_carlo():
    env, _, _ = task("taxi-classic")
    s = taxi_state(env, (2, 2), "R", "G")
    n = 100_000
    freq = _frequency(env, s, "north", lambda t: (t["taxi"]["x"], t["taxi"]["y"]) == (2, 3), n, 1)
    assert abs(freq - 0.8) < 3 * np.sqrt(0.8 * 0.2 / n)


def test_fickle_monte_carlo_only_on_first_move():
    env, _, _ = task("taxi-classic")
    carried = taxi_state(env, (0, 4), "R", "G", in_taxi=True, armed=True)
    n = 100_000
    freq = _frequency(env, carried, "south", lambda t: t["p1"]["goal"] != "G", n, 2)
    assert abs(freq - 0.3) < 3 * np.sqrt(0.3 * 0.7 / n)
    moved = env.step(carried, "south", np.random.default_rng(0)).next_state
    assert not moved["p1"]["armed"]
    assert {o.next_state["p1"]["goal"] for _, o in env.outcomes(moved, "south")} == {moved["p1"]["goal"]}


def test_pickup_arms_the_passenger_only_when_fickle(rng):
    for name, armed in (("taxi-classic", True), ("taxi-classic-deterministic", False)):
        env, _, _ = task(name)
        s = taxi_state(env, (0, 4), "R", "G")
        assert env.step(s, "pickup", rng).next_state["p1"]["armed"] is armed


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 5), min_size=1, max_size=80))
def test_random_walk_invariants(seed, actions):
    env, s, _ = task("taxi-classic-2p", seed)
    r = np.random.default_rng(seed)
    ids = [a.id for a in env.primitive_actions()]
    for ai in actions:
        out = env.step(s, ids[ai], r)
        t = out.next_state
        x, y = t["taxi"]["x"], t["taxi"]["y"]
        assert 0 <= x < env.width and 0 <= y < env.height
        if (x, y) != (s["taxi"]["x"], s["taxi"]["y"]):
            assert abs(x - s["taxi"]["x"]) + abs(y - s["taxi"]["y"]) == 1
            dx, dy = x - s["taxi"]["x"], y - s["taxi"]["y"]
            direction = {(0, 1): "north", (0, -1): "south", (1, 0): "east", (-1, 0): "west"}[(dx, dy)]
            assert not env.blocked(s["taxi"]["x"], s["taxi"]["y"], direction)
        assert sum(t[p]["in_taxi"] for p in env.passenger_ids) <= 1
        assert set(env.passenger_ids) <= set(t.objects)
        assert (out.terminal is Terminal.GOAL) == env.is_goal(t)
        if out.terminal is Terminal.GOAL:
            break
        s = t


@pytest.mark.parametrize("variant,bound", [("taxi-small", 100), ("taxi-classic", 500)])
def test_enumeration_bounds(variant, bound):
    env, s0, _ = task(variant)
    mdp = enumerate_mdp(env, s0)
    mdp.check()
    assert 1 < len(mdp.states) <= bound


def test_deterministic_step_is_pure(rng):
    env, s0, _ = task("taxi-small")
    for a in env.primitive_actions():
        outs = env.outcomes(s0, a)
        assert len(outs) == 1
        assert env.step(s0, a, rng) == env.step(s0, a, np.random.default_rng(99)) == outs[0][1]
