import math

import numpy as np
import pytest

from empg.core import Batch, Step, Trajectory


def make_step(state="s0", action=(0,), entropies=(0.5,), logp=-0.7):
    return Step(state, tuple(action), tuple(entropies), logp)


def make_traj(group, reward, n_steps=1, task=None, seed=0, entropies=None):
    ents = entropies or [0.5] * n_steps
    steps = tuple(make_step(f"s{t}", entropies=(h,)) for t, h in enumerate(ents))
    return Trajectory(group if task is None else task, group, seed, steps, reward)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def minimal_batch():
    return Batch.from_trajectories([make_traj(0, 0), make_traj(0, 1)])


def reference_grpo_update(policy, batch, lr, eps=1e-8):
    """Plain GRPO policy gradient written from scratch, sharing nothing with the pipeline."""
    adv = {}
    for members in batch.groups.values():
        r = [batch.trajectories[i].terminal_reward for i in members]
        mu = sum(r) / len(r)
        sd = math.sqrt(sum((x - mu) ** 2 for x in r) / len(r))
        if sd == 0:
            continue
        for i, x in zip(members, r):
            adv[i] = (x - mu) / (sd + eps)
    weights = [(i, t) for i in sorted(adv) for t in range(len(batch.trajectories[i].steps))]
    shift = sum(adv[i] for i, _ in weights) / len(weights)
    logits = {s: [z.copy() for z in policy.logits(s)] for s in policy.states}
    for i, t in weights:
        step = batch.trajectories[i].steps[t]
        for pos, a in enumerate(step.action):
            z = policy.logits(step.state_id)[pos]
            p = np.exp(z - z.max())
            p /= p.sum()
            onehot = np.zeros_like(p)
            onehot[a] = 1.0
            logits[step.state_id][pos] += lr * (adv[i] - shift) * (onehot - p)
    return logits


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
