import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from empg import analysis
from empg.analysis import (
    EmptyLedger, MismatchedGrids, compare_runs, entropy_change_by_percentile, final_window, percentile_bins,
)
from empg.config import RunConfig
from empg.envs import parse_env_spec
from empg.modulation import Ablation
from empg.policy import FactoredStepPolicy
from empg.trainer import train


def random_policy(rng, n_states=12):
    return FactoredStepPolicy({f"s{i}": [rng.normal(0, 1.5, 3), rng.normal(0, 1.5, 4)] for i in range(n_states)})


def steps_of(policy, rng, n=200):
    states = policy.states
    picks = [states[int(rng.integers(len(states)))] for _ in range(n)]
    return [(s, policy.step_entropy(s)) for s in picks]


def test_identical_policy_gives_zero(rng):
    p = random_policy(rng)
    bins = entropy_change_by_percentile(steps_of(p, rng), p)
    assert len(bins) == 20 and sum(b.count for b in bins) == 200
    assert all(b.mean_entropy_change == 0.0 for b in bins if b.count)
    assert [(b.lower, b.upper) for b in bins][:2] == [(0.0, 5.0), (5.0, 10.0)]


def test_sharpened_policy_never_gains_entropy(rng):
    p = random_policy(rng)
    sharp = FactoredStepPolicy({s: [2 * z for z in p.logits(s)] for s in p.states})
    bins = entropy_change_by_percentile(steps_of(p, rng), sharp)
    assert all(b.mean_entropy_change <= 0 for b in bins if b.count)


def test_empty_bins_and_errors():
    p = FactoredStepPolicy.uniform(["a"], [2])
    bins = entropy_change_by_percentile([("a", math.log(2))] * 3, p)
    assert bins[0].count == 3 and all(b.count == 0 and math.isnan(b.mean_entropy_change) for b in bins[1:])
    with pytest.raises(EmptyLedger):
        entropy_change_by_percentile([], p)


@given(st.lists(st.floats(0, 3, allow_nan=False), min_size=1, max_size=60), st.integers(2, 4))
def test_binning_stable_under_duplication(values, times):
    once = percentile_bins(values)
    assert np.all((0 <= once) & (once < 20))
    np.testing.assert_array_equal(percentile_bins(values * times), np.tile(once, times))


def test_final_window():
    assert final_window([0.3] * 50) == pytest.approx(0.3)
    assert final_window(list(range(20))) == 18.5
    assert math.isnan(final_window([]))


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = RunConfig(env=parse_env_spec("chain8"), tasks_per_batch=2, group_size=4, iterations=4)
    out = {}
    for variant in (Ablation.BASELINE, Ablation.FULL):
        for seed in (0, 1):
            out[(variant.value, seed)], _ = train(cfg.replace(ablation=variant, seed=seed),
                                                  root / f"{variant.value}_{seed}")
    out["short"], _ = train(cfg.replace(iterations=2), root / "short")
    out["twin"], _ = train(cfg.replace(ablation=Ablation.BASELINE, seed=0), root / "twin")
    return out


def test_compare_shape(runs):
    dirs = [runs[("baseline", 0)], runs[("baseline", 1)], runs[("full", 0)], runs[("full", 1)]]
    cmp = compare_runs(dirs)
    assert len(cmp.rows) == 4 * 4
    for it in range(4):
        assert sorted((l, s) for i, l, s, _ in cmp.rows if i == it) == [
            ("baseline", 0), ("baseline", 1), ("full", 0), ("full", 1)]
    assert compare_runs(dirs[::-1]).rows == cmp.rows


def test_identical_runs_identical_columns(runs):
    cmp = compare_runs([runs[("baseline", 0)], runs["twin"]], labels=["a", "b"])
    a = [v for _, l, _, v in cmp.rows if l == "a"]
    b = [v for _, l, _, v in cmp.rows if l == "b"]
    assert a == b


def test_mismatched_grids(runs):
    with pytest.raises(MismatchedGrids):
        compare_runs([runs[("full", 0)], runs["short"]])


def test_entropy_analysis_on_run(runs):
    bins = analysis.analyze_entropy_change(runs[("full", 0)])
    steps = analysis.first_iteration_steps(runs[("full", 0)])
    assert sum(b.count for b in bins) == len(steps)
    table = analysis.bins_table(bins)
    assert table.splitlines()[0] == "lower\tupper\tmean_entropy_change\tcount"
    assert len(table.splitlines()) == 21
