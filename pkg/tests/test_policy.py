import math

import numpy as np
import pytest

from empg.policy import ActionOutOfRange, FactoredStepPolicy, TabularSoftmaxPolicy, UnknownState
from empg.theory import finite_difference_score


def tab(*logits):
    return TabularSoftmaxPolicy({"s": np.array(logits, dtype=float)})


@pytest.mark.parametrize("logits, expected", [
    ((0.0, 0.0), [0.5, 0.5]),
    ((math.log(3), 0.0), [0.75, 0.25]),
    ((0.0, 0.0, 0.0, 0.0), [0.25] * 4),
])
def test_action_distribution(logits, expected):
    np.testing.assert_allclose(tab(*logits).action_distribution("s"), expected, rtol=0, atol=1e-15)


def test_unknown_state():
    with pytest.raises(UnknownState):
        tab(0.0, 0.0).action_distribution("nope")


def test_score_examples():
    np.testing.assert_allclose(tab(0.0, 0.0).score_logits("s", 0), [0.5, -0.5], atol=1e-15)
    np.testing.assert_allclose(tab(math.log(3), 0.0).score_logits("s", 1), [-0.75, 0.75], atol=1e-15)
    with pytest.raises(ActionOutOfRange):
        tab(0.0, 0.0).score_logits("s", 2)


def test_score_sums_to_zero(rng):
    for _ in range(50):
        n = int(rng.integers(2, 10))
        p = tab(*rng.normal(0, 3, n))
        assert abs(p.score_logits("s", int(rng.integers(n))).sum()) < 1e-12


@pytest.mark.parametrize("logits, expected", [
    ((0.0, 0.0), math.log(2)),
    ((0.0,) * 4, math.log(4)),
    ((math.log(3), 0.0), 0.5623351446188083),  # -(.75 ln .75 + .25 ln .25)
])
def test_policy_entropy(logits, expected):
    assert tab(*logits).policy_entropy("s") == pytest.approx(expected, abs=1e-12)


def test_entropy_bounds_and_simplex(rng):
    for _ in range(200):
        n = int(rng.integers(2, 12))
        p = tab(*rng.normal(0, 4, n))
        pi = p.action_distribution("s")
        assert abs(pi.sum() - 1) < 1e-12 and pi.min() > 0
        assert -1e-12 <= p.policy_entropy("s") <= math.log(n) + 1e-12
    assert tab(50.0, 0.0).policy_entropy("s") < 1e-18


def test_log_prob_examples():
    assert tab(0.0, 0.0).action_log_prob("s", 0) == pytest.approx(math.log(0.5))
    fac = FactoredStepPolicy.uniform(["s"], [2, 2, 2])
    assert fac.log_prob("s", (0, 1, 1)) == pytest.approx(3 * math.log(0.5))
    assert tab(math.log(3), 0.0).action_log_prob("s", 0) == pytest.approx(math.log(0.75))
    with pytest.raises(ActionOutOfRange):
        fac.log_prob("s", (0, 1))


def test_sample_step_deterministic_policy(rng):
    p = tab(50.0, 0.0)
    for _ in range(100):
        action, ents, logp = p.sample_step("s", rng)
        assert action == (0,)
        assert ents[0] == pytest.approx(0.0, abs=1e-18)
        assert logp <= 0


def test_sample_step_seeded_repeatable():
    p = FactoredStepPolicy({"s": [np.array([0.3, -1.0, 2.0]), np.array([0.0, 0.5])]})
    a = [p.sample_step("s", np.random.default_rng(7)) for _ in range(2)]
    assert a[0] == a[1]


def test_sample_step_monte_carlo():
    p = tab(0.0, 0.0)
    rng = np.random.default_rng(2024)
    hits = sum(p.sample_step("s", rng)[0][0] == 0 for _ in range(10_000))
    # 3-sigma binomial bound: 3 * sqrt(.25 / 1e4) = 0.015 < 0.02
    assert abs(hits / 10_000 - 0.5) <= 0.02


def test_factored_sample_records_positional_entropies(rng):
    z = [np.array([0.0, 1.0]), np.array([0.0, 0.0, 0.0])]
    p = FactoredStepPolicy({"s": z})
    action, ents, logp = p.sample_step("s", rng)
    assert len(action) == 2 and len(ents) == 2
    assert ents[1] == pytest.approx(math.log(3))
    assert logp == pytest.approx(p.log_prob("s", action))


def test_score_matches_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        sizes = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 4)))]
        p = FactoredStepPolicy({"s": [rng.normal(0, 2, n) for n in sizes]})
        action = tuple(int(rng.integers(n)) for n in sizes)
        for a, b in zip(p.score("s", action), finite_difference_score(p, "s", action, 1e-5)):
            worst = max(worst, float(np.max(np.abs(a - b))))
    assert worst < 1e-6


def test_checkpoint_roundtrip(rng):
    p = FactoredStepPolicy({f"s{i}": [rng.normal(size=3), rng.normal(size=4)] for i in range(5)})
    again = FactoredStepPolicy.from_records(p.to_records())
    assert again == p
    assert again.to_records() == p.to_records()
    t = tab(0.1, -0.2)
    assert TabularSoftmaxPolicy.from_records(t.to_records()) == t


def test_policies_are_immutable():
    p = tab(0.0, 0.0)
    with pytest.raises(ValueError):
        p.logits("s")[0][0] = 1.0
    q = p.apply_deltas({"s": [np.array([1.0, -1.0])]})
    np.testing.assert_array_equal(p.logits("s")[0], [0.0, 0.0])
    np.testing.assert_array_equal(q.logits("s")[0], [1.0, -1.0])
    assert isinstance(q, TabularSoftmaxPolicy)
