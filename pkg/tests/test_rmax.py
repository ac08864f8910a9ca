import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palm.executor import ExecutionContext
from palm.lamdp import load_hierarchy
from palm.rmax import OPTIMISTIC, ModelLoadError, TabularModel, default_m

from conftest import task


def model(m=3):
    return TabularModel("Navigate", "sig", m, 0.95, 20.0)


def test_threshold_arithmetic():
    mdl = model(3)
    assert mdl.observe((0,), "a", (1,), 0.0) is False
    assert mdl.observe((0,), "a", (1,), 0.0) is False
    assert mdl.observe((0,), "a", (1,), 0.0) is False
    assert mdl.n_sa[((0,), "a")] == 3 and mdl.is_known((0,), "a")
    assert mdl.observe((0,), "a", (1,), 0.0) is True


def test_gated_observation_leaves_counts_alone():
    mdl = model(1)
    mdl.observe((0,), "a", (1,), 1.0, child_known=False)
    assert mdl.n_sa == {} and mdl.n_sas == {} and mdl.reward_sum == {}
    assert mdl.predicted((0,), "a") is OPTIMISTIC


def test_frozen_model_ignores_observations():
    mdl = model(1)
    mdl.observe((0,), "a", (1,), 1.0)
    before = mdl.serialize()
    mdl.freeze()
    for _ in range(1000):
        assert mdl.observe((0,), "a", (2,), -1.0) is True
    assert mdl.n_sa == {((0,), "a"): 1}
    assert mdl.serialize().replace(b"frozen 1", b"frozen 0").split(b"checksum")[0] == before.split(b"checksum")[0]


def test_unseen_pairs():
    mdl = model(2)
    assert not mdl.is_known((5,), "b") and mdl.predicted((5,), "b") is OPTIMISTIC
    mdl.freeze()
    assert mdl.is_known((5,), "b") and mdl.predicted((5,), "b") == []


def test_maximum_likelihood_distribution():
    mdl = model(4)
    for s2, r in (((1,), 0.0), ((1,), 0.0), ((1,), 1.0), ((2,), -1.0)):
        mdl.observe((0,), "a", s2, r)
    pred = {t.next_state: (t.probability, t.reward) for t in mdl.predicted((0,), "a")}
    assert pred == {(1,): (0.75, 1.0 / 3.0), (2,): (0.25, -1.0)}


def test_default_threshold_and_value_bound():
    assert default_m(False) == 1 and default_m(True) == 5
    node = load_hierarchy("et.hier")["Navigate"]
    mdl = TabularModel.for_subtask(node, 1, 0.95)
    assert mdl.value_max == pytest.approx(20.0)
    assert mdl.phi_signature == node.phi_signature()
    with pytest.raises(ValueError):
        TabularModel("x", "sig", 0, 0.95, 20.0)


transitions = st.lists(
    st.tuples(st.integers(0, 3), st.sampled_from("ab"), st.integers(0, 3),
              st.floats(-1, 1, allow_nan=False), st.booleans()),
    max_size=80,
)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), transitions)
def test_counts_stay_consistent_and_normalised(m, obs):
    mdl = model(m)
    for s, a, s2, r, known in obs:
        mdl.observe((s,), a, (s2,), r, known)
        assert mdl.check_consistency()
    for s, a in mdl.pairs():
        pred = mdl.predicted(s, a)
        if pred is not OPTIMISTIC:
            assert abs(sum(t.probability for t in pred) - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(transitions, st.booleans())
def test_serialization_roundtrip_is_exact(obs, frozen):
    mdl = model(2)
    for s, a, s2, r, known in obs:
        mdl.observe((s, "R", s % 2 == 0), a, (s2, "G", False), r, known)
    if frozen:
        mdl.freeze()
    back = TabularModel.deserialize(mdl.serialize())
    assert back.n_sa == mdl.n_sa and back.n_sas == mdl.n_sas and back.reward_sum == mdl.reward_sum
    assert (back.m, back.gamma, back.value_max, back.frozen) == (mdl.m, mdl.gamma, mdl.value_max, mdl.frozen)
    assert back.serialize() == mdl.serialize()


def test_corrupted_file_is_refused():
    mdl = model(1)
    mdl.observe((0,), "a", (1,), 0.5)
    data = mdl.serialize()
    with pytest.raises(ModelLoadError):
        TabularModel.deserialize(data.replace(b"\nm 1\n", b"\nm 2\n"))
    with pytest.raises(ModelLoadError):
        TabularModel.deserialize(data.replace(b"palm-model 1", b"palm-model 9"))


def test_known_pairs_are_deterministic_on_taxi_small():
    env, s0, rng = task("taxi-small")
    ctx = ExecutionContext(load_hierarchy("et.hier"), env, rng, m=1)
    for e in range(30):
        ctx.run_episode(e, s0)
    seen = 0
    for mdl in ctx.models.values():
        for s, a in mdl.pairs():
            if mdl.is_known(s, a):
                seen += 1
                (only,) = mdl.predicted(s, a)
                assert only.probability == 1.0
    assert seen > 0
