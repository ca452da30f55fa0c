import itertools
from collections import deque

import pytest

from empg import envs
from empg.envs import (
    PRESETS, AmbiguityFork, ChainMaze, InvalidSpec, KeyDoor, NotTerminal, SteppedAfterDone,
    counter_draw, parse_env_spec, reset, step, terminal_reward,
)


def run(spec, actions, seed=0):
    s = reset(spec, seed)
    states = [s]
    for a in actions:
        s, done = step(spec, s, a)
        states.append(s)
        if done:
            break
    return states


def test_reset_examples():
    assert reset(ChainMaze(8, 16), 0).observation_id == "c0"
    assert reset(PRESETS["fork3x3"], 5) == reset(PRESETS["fork3x3"], 5)
    assert reset(PRESETS["fork3x3"]).observation_id == "fork"


def test_chain_examples():
    spec = ChainMaze(3, 10)
    last = run(spec, [(1,), (1,)])[-1]
    assert last.done and terminal_reward(last) == 1
    spec = ChainMaze(3, 2)
    last = run(spec, [(0,), (0,)])[-1]
    assert last.done and terminal_reward(last) == 0 and last.step_count == 2


def test_keydoor_without_key():
    spec = KeyDoor(5, 5, 40)
    # walk east to (2, 0), then try the door at (3, 0)
    last = run(spec, [(0, 1), (0, 1), (2, 1)])[-1]
    assert last.done and terminal_reward(last) == 0


def test_keydoor_solution():
    spec = KeyDoor(5, 5, 40)
    plan = [(0, 1), (1, 0), (0, 1), (2, 1), (0, 1), (0, 1)]
    states = run(spec, plan)
    assert len(plan) == spec.shortest_solution
    assert states[-1].done and terminal_reward(states[-1]) == 1


def test_fork_both_corridors():
    spec = AmbiguityFork(3, 3, 12)
    a_plan = [(0, 0)] + [(0, spec.code(p)) for p in range(3)]
    last = run(spec, a_plan)[-1]
    assert terminal_reward(last) == 1
    # in B, read the hidden cell and answer it; the observation alone does not tell
    s = reset(spec, 9)
    s, _ = step(spec, s, (0, 1))
    while not s.done:
        s, _ = step(spec, s, (0, s.hidden[2]))
    assert terminal_reward(s) == 1 and s.step_count == spec.shortest_solution


def test_errors():
    spec = ChainMaze(3, 10)
    last = run(spec, [(1,), (1,)])[-1]
    with pytest.raises(SteppedAfterDone):
        step(spec, last, (1,))
    with pytest.raises(NotTerminal):
        terminal_reward(reset(spec))
    with pytest.raises(ValueError):
        step(spec, reset(spec), (2,))
    with pytest.raises(InvalidSpec):
        ChainMaze(8, 3)
    with pytest.raises(InvalidSpec):
        parse_env_spec("maze(1)")


def test_parse_roundtrip():
    for name, spec in PRESETS.items():
        assert parse_env_spec(name) == spec
        assert parse_env_spec(str(spec)) == spec
    assert parse_env_spec("key_door(6, 3, 30)") == KeyDoor(6, 3, 30)


def all_actions(spec):
    return list(itertools.product(*(range(n) for n in spec.vocab_sizes)))


def bfs_shortest(spec, seed=0):
    """Breadth-first search over env states; returns the shortest rewarding length or None."""
    start = reset(spec, seed)
    queue = deque([start])
    seen = {start}
    while queue:
        s = queue.popleft()
        for a in all_actions(spec):
            nxt, done = step(spec, s, a)
            if done:
                if nxt.reward == 1:
                    return nxt.step_count
                continue
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return None


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_solvable(name):
    spec = PRESETS[name]
    length = bfs_shortest(spec)
    assert length is not None and length <= spec.horizon
    assert length == spec.shortest_solution


@pytest.mark.parametrize("w", [2, 3, 4])
@pytest.mark.parametrize("depth", [1, 2, 3])
def test_aliasing_bound(w, depth):
    """Each aliased decision in B succeeds for exactly 1/w of the hidden cells, whatever the argument."""
    spec = AmbiguityFork(depth, w, 4 * depth + 1)
    entered = step(spec, reset(spec, 0), (0, 1))[0]
    for p in range(depth):
        observations = set()
        for arg in range(w):
            advanced = 0
            for cell in range(w):
                s = entered.__class__(f"B{p}", False, 1, hidden=("B", p, cell), seed=0)
                nxt, _ = step(spec, s, (0, arg))
                observations.add(s.observation_id)
                advanced += nxt.observation_id in (f"B{p + 1}", "goal")
            assert advanced / w == 1 / w
        assert len(observations) == 1  # the cell never shows in the observation


def test_aliasing_draws_are_uniform():
    for w in (2, 3, 4):
        counts = [0] * w
        for seed in range(4000):
            counts[counter_draw(seed, 0, w)] += 1
        assert max(abs(c / 4000 - 1 / w) for c in counts) < 0.03


@pytest.mark.parametrize("w", [2, 3, 4])
@pytest.mark.parametrize("depth", [1, 2, 3])
def test_aliasing_exact_enumeration(w, depth):
    """Average over every hidden sequence: a fixed per-observation choice solves B in one pass with (1/w)^depth."""
    spec = AmbiguityFork(depth, w, 1 + depth)
    for policy in itertools.product(range(w), repeat=depth):
        wins = 0
        for cells in itertools.product(range(w), repeat=depth):
            p = 0
            while p < depth and policy[p] == cells[p]:
                p += 1
            wins += p == depth
        assert wins / w ** depth == pytest.approx((1 / w) ** depth)
    # the env itself: B with horizon 1 + depth is exactly one pass
    for seed in range(50):
        s = reset(spec, seed)
        s, _ = step(spec, s, (0, 1))
        assert s.observation_id == "B0" and s.hidden[2] in range(w)


def test_determinism():
    for spec in PRESETS.values():
        acts = all_actions(spec)
        for seed in (0, 1, 77):
            plan = [acts[(i * 7 + seed) % len(acts)] for i in range(spec.horizon)]
            assert run(spec, plan, seed) == run(spec, plan, seed)


def test_counter_draw_pure():
    assert counter_draw(3, 4, 10) == counter_draw(3, 4, 10)
    assert len({counter_draw(3, c, 1000) for c in range(50)}) > 40
    assert not hasattr(envs, "random")
