"""Batch structure, the per-step advantage ledger, and their line-delimited codecs.

Each line of a ``.batch`` file is one trajectory::

    {"task_id": ..., "group_id": ..., "seed": ..., "terminal_reward": 0|1,
     "steps": [{"state_id": ..., "action": [...], "token_entropies": [...],
                "old_log_prob": ...}, ...]}

Each line of a ``.records`` file is one AdvantageRecord with the field names
of the dataclass below (``f_next`` is ``null`` on a trajectory's final step).
Floats are written with ``repr`` precision so decoding is bitwise exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence


class InvalidBatch(ValueError):
    """A batch violates one of its structural invariants."""


class EmptyBatch(InvalidBatch):
    pass


class SingletonGroup(InvalidBatch):
    pass


class RewardOutOfRange(InvalidBatch):
    pass


@dataclass(frozen=True)
class Step:
    """One reason-act cycle: the observed state and the composite action taken there."""

    state_id: str
    action: tuple[int, ...]
    token_entropies: tuple[float, ...]
    old_log_prob: float


@dataclass(frozen=True)
class Trajectory:
    task_id: int
    group_id: int
    seed: int
    steps: tuple[Step, ...]
    terminal_reward: int

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class Batch:
    trajectories: tuple[Trajectory, ...]
    groups: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory]) -> "Batch":
        """Build a batch, grouping trajectories by ``group_id`` in first-seen order."""
        trajectories = tuple(trajectories)
        groups: dict[int, list[int]] = {}
        for i, traj in enumerate(trajectories):
            groups.setdefault(traj.group_id, []).append(i)
        return cls(trajectories, {g: tuple(ix) for g, ix in groups.items()})

    @property
    def num_steps(self) -> int:
        return sum(len(t) for t in self.trajectories)


@dataclass(frozen=True)
class AdvantageRecord:
    traj_index: int
    step_index: int
    a_outcome: float
    h_step: float
    h_norm: float
    g: float
    f_next: Optional[float]
    a_mod: float
    a_final: float = math.nan


def validate_batch(batch: Batch, horizon: Optional[int] = None) -> None:
    """Raise the InvalidBatch subclass for the first violated invariant."""
    if not batch.trajectories:
        raise EmptyBatch("batch has no trajectories")
    seen: dict[int, int] = {}
    for gid, members in batch.groups.items():
        if len(members) < 2:
            raise SingletonGroup(f"group {gid} has {len(members)} trajectory(ies); need >= 2")
        for i in members:
            if not 0 <= i < len(batch.trajectories):
                raise InvalidBatch(f"group {gid} references missing trajectory {i}")
            if i in seen:
                raise InvalidBatch(f"trajectory {i} appears in groups {seen[i]} and {gid}")
            seen[i] = gid
    if len(seen) != len(batch.trajectories):
        missing = sorted(set(range(len(batch.trajectories))) - set(seen))
        raise InvalidBatch(f"trajectories {missing} belong to no group")
    for i, traj in enumerate(batch.trajectories):
        if traj.terminal_reward not in (0, 1) or isinstance(traj.terminal_reward, bool):
            raise RewardOutOfRange(f"trajectory {i} has terminal_reward={traj.terminal_reward!r}")
        if not traj.steps:
            raise InvalidBatch(f"trajectory {i} has no steps")
        if horizon is not None and len(traj.steps) > horizon:
            raise InvalidBatch(f"trajectory {i} has {len(traj.steps)} steps > horizon {horizon}")
        for t, step in enumerate(traj.steps):
            if not step.action:
                raise InvalidBatch(f"step ({i}, {t}) has an empty action")
            if not step.token_entropies:
                raise InvalidBatch(f"step ({i}, {t}) has no token entropies")
            if any(h < 0 or not math.isfinite(h) for h in step.token_entropies):
                raise InvalidBatch(f"step ({i}, {t}) has a negative or non-finite entropy")
            if step.old_log_prob > 0:
                raise InvalidBatch(f"step ({i}, {t}) has old_log_prob > 0")


# -- codecs ---------------------------------------------------------------


def _step_to_dict(step: Step) -> dict:
    return {
        "state_id": step.state_id,
        "action": list(step.action),
        "token_entropies": list(step.token_entropies),
        "old_log_prob": step.old_log_prob,
    }


def encode_trajectory(traj: Trajectory) -> str:
    return json.dumps({
        "task_id": traj.task_id,
        "group_id": traj.group_id,
        "seed": traj.seed,
        "terminal_reward": traj.terminal_reward,
        "steps": [_step_to_dict(s) for s in traj.steps],
    })


def decode_trajectory(line: str) -> Trajectory:
    d = json.loads(line)
    steps = tuple(
        Step(s["state_id"], tuple(s["action"]), tuple(float(h) for h in s["token_entropies"]),
             float(s["old_log_prob"]))
        for s in d["steps"]
    )
    return Trajectory(d["task_id"], d["group_id"], d["seed"], steps, d["terminal_reward"])


def encode_batch(batch: Batch) -> str:
    return "".join(encode_trajectory(t) + "\n" for t in batch.trajectories)


def decode_batch(text: str) -> Batch:
    return Batch.from_trajectories(decode_trajectory(line) for line in text.splitlines() if line.strip())


def encode_record(rec: AdvantageRecord) -> str:
    return json.dumps(asdict(rec))


def decode_record(line: str) -> AdvantageRecord:
    d = json.loads(line)
    return AdvantageRecord(**d)


def encode_records(records: Sequence[AdvantageRecord]) -> str:
    return "".join(encode_record(r) + "\n" for r in records)


def decode_records(text: str) -> list[AdvantageRecord]:
    return [decode_record(line) for line in text.splitlines() if line.strip()]
