"""Sparse outcome returns and group-relative advantages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import Trajectory


class GroupTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class GroupAdvantage:
    group_id: int
    rewards: tuple[float, ...]
    mean: float
    std: float
    advantages: tuple[float, ...]


def trajectory_return(traj: Trajectory) -> int:
    # Undiscounted with r_t = 0 before the end, so the return is the terminal reward.
    return traj.terminal_reward


def grpo_advantages(rewards: Sequence[float], epsilon: float = 1e-8) -> np.ndarray:
    """Z-score within one group using the population standard deviation."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"group needs >= 2 rewards, got {r.size}")
    return (r - r.mean()) / (r.std() + epsilon)


def group_advantage(group_id: int, rewards: Sequence[float], epsilon: float = 1e-8) -> GroupAdvantage:
    r = np.asarray(rewards, dtype=np.float64)
    adv = grpo_advantages(r, epsilon)
    return GroupAdvantage(group_id, tuple(r.tolist()), float(r.mean()), float(r.std()), tuple(adv.tolist()))


def filter_groups(group_rewards: Mapping[int, Sequence[float]]) -> tuple[dict[int, Sequence[float]], int]:
    """Drop groups whose rewards are all identical; return survivors and the drop count."""
    survivors = {g: r for g, r in group_rewards.items() if len(set(r)) > 1}
    return survivors, len(group_rewards) - len(survivors)
