"""Small sparse-reward environments with composite (multi-sub-choice) actions.

``chain_maze(n, horizon)``
    Positions ``0..n-1``, start at 0. One sub-choice: 0 = back, 1 = forward.
    Reaching ``n-1`` ends the episode with reward 1.

``key_door(width, height, horizon)``
    Grid with a wall in column ``width-2`` whose only gap is a locked door at
    ``(width-2, 0)``. Start ``(0, 0)``, key ``(1, 0)``, goal ``(width-1, 0)``
    just behind the door. Two sub-choices: verb (0 move, 1 pick, 2 open) and
    direction (0 north, 1 east, 2 south, 3 west). Trying to open the door
    without the key ends the episode with reward 0.

``ambiguity_fork(depth, alias_width, horizon)``
    From ``fork`` the agent picks corridor A (advance, 0) or B (advance, 1).
    Both need ``depth`` correct advances to reach the goal. In A the correct
    argument at position ``p`` is ``(p + 1) % alias_width`` and every position
    has its own observation. In B the correct argument is a hidden cell drawn
    uniformly from ``alias_width`` values and redrawn after every attempt; the
    observation ``B<p>`` does not reveal it. Verb 1 waits.

Every episode ends with reward 0 once ``horizon`` steps are used. Hidden
draws come from a counter-based generator keyed on the episode seed, so a
(seed, action sequence) pair always yields the same episode.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union


class InvalidSpec(ValueError):
    pass


class SteppedAfterDone(RuntimeError):
    pass


class NotTerminal(RuntimeError):
    pass


def counter_draw(seed: int, counter: int, n: int) -> int:
    """Uniform integer in ``[0, n)`` determined by ``(seed, counter)`` alone."""
    digest = hashlib.blake2b(f"{seed}:{counter}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % n


@dataclass(frozen=True)
class EnvState:
    observation_id: str
    done: bool
    step_count: int
    reward: Optional[int] = None
    hidden: tuple = ()
    seed: int = 0
    draws: int = 0


def _advance(state: EnvState, horizon: int, obs: str, hidden: tuple, *,
             reward: Optional[int] = None, draws: Optional[int] = None) -> EnvState:
    count = state.step_count + 1
    done = reward is not None
    if not done and count >= horizon:
        done, reward = True, 0
    return replace(state, observation_id=obs, hidden=hidden, step_count=count, done=done,
                   reward=reward, draws=state.draws if draws is None else draws)


@dataclass(frozen=True)
class ChainMaze:
    n: int
    horizon: int

    BACK = 0
    FORWARD = 1
    kind = "chain_maze"

    def __post_init__(self):
        if self.n < 2:
            raise InvalidSpec("chain_maze needs n >= 2")
        if self.horizon < self.shortest_solution:
            raise InvalidSpec(f"horizon {self.horizon} < shortest solution {self.shortest_solution}")

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return (2,)

    @property
    def shortest_solution(self) -> int:
        return self.n - 1

    def observations(self) -> list[str]:
        return [f"c{i}" for i in range(self.n)]

    def reset(self, seed: int = 0) -> EnvState:
        return EnvState("c0", False, 0, hidden=(0,), seed=seed)

    def step(self, state: EnvState, action: Sequence[int]) -> EnvState:
        (pos,) = state.hidden
        pos = min(pos + 1, self.n - 1) if action[0] == self.FORWARD else max(pos - 1, 0)
        reward = 1 if pos == self.n - 1 else None
        return _advance(state, self.horizon, f"c{pos}", (pos,), reward=reward)

    def __str__(self) -> str:
        return f"chain_maze({self.n}, {self.horizon})"


@dataclass(frozen=True)
class KeyDoor:
    width: int
    height: int
    horizon: int

    MOVE, PICK, OPEN = 0, 1, 2
    DIRECTIONS = ((0, -1), (1, 0), (0, 1), (-1, 0))
    kind = "key_door"

    def __post_init__(self):
        if self.width < 4 or self.height < 1:
            raise InvalidSpec("key_door needs width >= 4 and height >= 1")
        if self.horizon < self.shortest_solution:
            raise InvalidSpec(f"horizon {self.horizon} < shortest solution {self.shortest_solution}")

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return (3, 4)

    @property
    def door(self) -> tuple[int, int]:
        return (self.width - 2, 0)

    @property
    def key(self) -> tuple[int, int]:
        return (1, 0)

    @property
    def goal(self) -> tuple[int, int]:
        return (self.width - 1, 0)

    @property
    def shortest_solution(self) -> int:
        # onto the key, pick, along to the door, open, two moves through it
        return 1 + 1 + (self.width - 4) + 1 + 2

    @staticmethod
    def _obs(x: int, y: int, has_key: bool, door_open: bool) -> str:
        return f"kd{x},{y},{int(has_key)}{int(door_open)}"

    def observations(self) -> list[str]:
        return [self._obs(x, y, k, d) for x in range(self.width) for y in range(self.height)
                for k in (False, True) for d in (False, True)]

    def reset(self, seed: int = 0) -> EnvState:
        return EnvState(self._obs(0, 0, False, False), False, 0, hidden=(0, 0, False, False), seed=seed)

    def _blocked(self, x: int, y: int, door_open: bool) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return True
        if x == self.width - 2:
            return not ((x, y) == self.door and door_open)
        return False

    def step(self, state: EnvState, action: Sequence[int]) -> EnvState:
        x, y, has_key, door_open = state.hidden
        verb, direction = action
        dx, dy = self.DIRECTIONS[direction]
        reward = None
        if verb == self.MOVE:
            if not self._blocked(x + dx, y + dy, door_open):
                x, y = x + dx, y + dy
            if (x, y) == self.goal:
                reward = 1 if has_key and door_open else 0
        elif verb == self.PICK:
            if (x, y) == self.key:
                has_key = True
        elif verb == self.OPEN and (x + dx, y + dy) == self.door and not door_open:
            if has_key:
                door_open = True
            else:
                reward = 0
        return _advance(state, self.horizon, self._obs(x, y, has_key, door_open),
                        (x, y, has_key, door_open), reward=reward)

    def __str__(self) -> str:
        return f"key_door({self.width}, {self.height}, {self.horizon})"


@dataclass(frozen=True)
class AmbiguityFork:
    depth: int
    alias_width: int
    horizon: int

    ADVANCE, WAIT = 0, 1
    CORRIDOR_A, CORRIDOR_B = 0, 1
    kind = "ambiguity_fork"

    def __post_init__(self):
        if self.depth < 1 or self.alias_width < 2:
            raise InvalidSpec("ambiguity_fork needs depth >= 1 and alias_width >= 2")
        if self.horizon < self.shortest_solution:
            raise InvalidSpec(f"horizon {self.horizon} < shortest solution {self.shortest_solution}")

    @property
    def vocab_sizes(self) -> tuple[int, ...]:
        return (2, max(2, self.alias_width))

    @property
    def shortest_solution(self) -> int:
        return 1 + self.depth

    def code(self, position: int) -> int:
        """Correct argument at corridor-A position ``position``."""
        return (position + 1) % self.alias_width

    def observations(self) -> list[str]:
        return ["fork"] + [f"A{p}" for p in range(self.depth)] + [f"B{p}" for p in range(self.depth)]

    def reset(self, seed: int = 0) -> EnvState:
        return EnvState("fork", False, 0, hidden=("fork",), seed=seed)

    def _enter_b(self, state: EnvState, position: int) -> tuple[str, tuple, int]:
        cell = counter_draw(state.seed, state.draws, self.alias_width)
        return f"B{position}", ("B", position, cell), state.draws + 1

    def step(self, state: EnvState, action: Sequence[int]) -> EnvState:
        verb, arg = action
        where = state.hidden
        if verb != self.ADVANCE:
            return _advance(state, self.horizon, state.observation_id, where)
        if where[0] == "fork":
            if arg == self.CORRIDOR_A:
                return _advance(state, self.horizon, "A0", ("A", 0))
            if arg == self.CORRIDOR_B:
                obs, hidden, draws = self._enter_b(state, 0)
                return _advance(state, self.horizon, obs, hidden, draws=draws)
            return _advance(state, self.horizon, "fork", where)
        if where[0] == "A":
            p = where[1]
            if arg != self.code(p):
                return _advance(state, self.horizon, state.observation_id, where)
            if p + 1 == self.depth:
                return _advance(state, self.horizon, "goal", ("goal",), reward=1)
            return _advance(state, self.horizon, f"A{p + 1}", ("A", p + 1))
        _, p, cell = where
        if arg == cell:
            if p + 1 == self.depth:
                return _advance(state, self.horizon, "goal", ("goal",), reward=1)
            p += 1
        obs, hidden, draws = self._enter_b(state, p)
        return _advance(state, self.horizon, obs, hidden, draws=draws)

    def __str__(self) -> str:
        return f"ambiguity_fork({self.depth}, {self.alias_width}, {self.horizon})"


EnvSpec = Union[ChainMaze, KeyDoor, AmbiguityFork]

KINDS = {"chain_maze": ChainMaze, "key_door": KeyDoor, "ambiguity_fork": AmbiguityFork}

PRESETS: dict[str, EnvSpec] = {
    "chain8": ChainMaze(8, 16),
    "keydoor5x5": KeyDoor(5, 5, 40),
    "fork3x3": AmbiguityFork(3, 3, 12),
}

_SPEC_RE = re.compile(r"^\s*(\w+)\s*\(\s*([\d\s,]*)\)\s*$")


def parse_env_spec(text: str) -> EnvSpec:
    """Resolve a preset name (``chain8``) or a constructor string (``chain_maze(8, 16)``)."""
    text = text.strip()
    if text in PRESETS:
        return PRESETS[text]
    m = _SPEC_RE.match(text)
    if not m or m.group(1) not in KINDS:
        raise InvalidSpec(f"unknown environment {text!r}; presets: {sorted(PRESETS)}")
    args = [int(a) for a in m.group(2).split(",") if a.strip()]
    try:
        return KINDS[m.group(1)](*args)
    except TypeError as exc:
        raise InvalidSpec(f"bad arguments for {m.group(1)}: {exc}") from None


def reset(spec: EnvSpec, seed: int = 0) -> EnvState:
    return spec.reset(seed)


def step(spec: EnvSpec, state: EnvState, action: Sequence[int]) -> tuple[EnvState, bool]:
    if state.done:
        raise SteppedAfterDone("episode already finished")
    if len(action) != len(spec.vocab_sizes) or any(
            not 0 <= a < n for a, n in zip(action, spec.vocab_sizes)):
        raise ValueError(f"action {tuple(action)} invalid for {spec}")
    new = spec.step(state, action)
    return new, new.done


def terminal_reward(state: EnvState) -> int:
    if not state.done:
        raise NotTerminal("episode still running")
    return state.reward
