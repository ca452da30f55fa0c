"""Tabular softmax policies with analytic score functions.

A step's composite action is a tuple of ``L`` sub-choices; position ``p`` draws
from its own logit vector ``z(s, p)``. Positions are independent given the
state, so ``log pi(a|s) = sum_p log softmax(z(s, p))[a_p]`` and the score with
respect to ``z(s, p)`` is ``onehot(a_p) - softmax(z(s, p))``.

Policies are immutable: updates return a new policy. That makes the per-state
distribution cache safe to share across rollouts.
"""

from __future__ import annotations

import bisect
import json
from typing import Iterable, Mapping, Sequence

import numpy as np

PROB_FLOOR = 1e-300


class UnknownState(KeyError):
    pass


class ActionOutOfRange(IndexError):
    pass


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; zero-probability entries contribute 0."""
    return float(-np.sum(p * np.log(np.maximum(p, PROB_FLOOR))))


class _StateCache:
    __slots__ = ("probs", "cdfs", "log_probs", "entropies")

    def __init__(self, logit_vectors: Sequence[np.ndarray]):
        self.probs = [softmax(z) for z in logit_vectors]
        self.cdfs = [np.cumsum(p).tolist() for p in self.probs]
        self.log_probs = [np.log(np.maximum(p, PROB_FLOOR)) for p in self.probs]
        self.entropies = tuple(entropy(p) for p in self.probs)


class FactoredStepPolicy:
    """Per-(state, position) logit vectors over small sub-vocabularies."""

    def __init__(self, logits: Mapping[str, Sequence[np.ndarray]]):
        table = {}
        for state, vectors in logits.items():
            frozen = []
            for z in vectors:
                z = np.array(z, dtype=np.float64)
                z.setflags(write=False)
                frozen.append(z)
            if not frozen:
                raise ValueError(f"state {state!r} has no positions")
            table[state] = tuple(frozen)
        self._logits: dict[str, tuple[np.ndarray, ...]] = table
        self._cache: dict[str, _StateCache] = {}

    @classmethod
    def uniform(cls, states: Iterable[str], vocab_sizes: Sequence[int]) -> "FactoredStepPolicy":
        return cls({s: [np.zeros(v) for v in vocab_sizes] for s in states})

    @classmethod
    def random(cls, states: Iterable[str], vocab_sizes: Sequence[int], scale: float,
               rng: np.random.Generator) -> "FactoredStepPolicy":
        """Logits drawn i.i.d. from N(0, scale^2); states consume draws in sorted order."""
        return cls({s: [scale * rng.standard_normal(v) for v in vocab_sizes] for s in sorted(states)})

    # -- structure -------------------------------------------------------

    @property
    def states(self) -> list[str]:
        return list(self._logits)

    def __contains__(self, state: str) -> bool:
        return state in self._logits

    def logits(self, state: str) -> tuple[np.ndarray, ...]:
        try:
            return self._logits[state]
        except KeyError:
            raise UnknownState(state) from None

    def vocab_sizes(self, state: str) -> tuple[int, ...]:
        return tuple(len(z) for z in self.logits(state))

    def _entry(self, state: str) -> _StateCache:
        entry = self._cache.get(state)
        if entry is None:
            entry = self._cache[state] = _StateCache(self.logits(state))
        return entry

    def _check_action(self, state: str, action: Sequence[int]) -> None:
        sizes = self.vocab_sizes(state)
        if len(action) != len(sizes):
            raise ActionOutOfRange(f"action {tuple(action)} has length {len(action)}, state {state!r} expects {len(sizes)}")
        for a, n in zip(action, sizes):
            if not 0 <= a < n:
                raise ActionOutOfRange(f"sub-choice {a} outside [0, {n}) at state {state!r}")

    # -- distributions ---------------------------------------------------

    def distributions(self, state: str) -> list[np.ndarray]:
        return [p.copy() for p in self._entry(state).probs]

    def position_entropies(self, state: str) -> tuple[float, ...]:
        return self._entry(state).entropies

    def step_entropy(self, state: str) -> float:
        """Mean of the positional entropies (the step-level entropy of this state)."""
        ents = self._entry(state).entropies
        return sum(ents) / len(ents)

    def log_prob(self, state: str, action: Sequence[int]) -> float:
        self._check_action(state, action)
        entry = self._entry(state)
        return float(sum(lp[a] for lp, a in zip(entry.log_probs, action)))

    def score(self, state: str, action: Sequence[int]) -> list[np.ndarray]:
        """d log pi(action|state) / d z(state, p) for every position p."""
        self._check_action(state, action)
        out = []
        for p, a in zip(self._entry(state).probs, action):
            g = -p
            g[a] += 1.0
            out.append(g)
        return out

    def sample_step(self, state: str, rng: np.random.Generator) -> tuple[tuple[int, ...], tuple[float, ...], float]:
        """Draw the sub-choices in position order.

        Returns the composite action, the per-position entropies at ``state``
        and the log-probability of the drawn action.
        """
        entry = self._entry(state)
        action = []
        for cdf in entry.cdfs:
            k = bisect.bisect_right(cdf, rng.random() * cdf[-1])
            action.append(min(k, len(cdf) - 1))
        action = tuple(action)
        logp = float(sum(lp[a] for lp, a in zip(entry.log_probs, action)))
        return action, entry.entropies, logp

    # -- updates and persistence -----------------------------------------

    def apply_deltas(self, deltas: Mapping[str, Sequence[np.ndarray]]) -> "FactoredStepPolicy":
        """New policy with ``deltas`` added to the logits of the listed states."""
        table = dict(self._logits)
        for state, dz in deltas.items():
            old = self.logits(state)
            table[state] = [z + d for z, d in zip(old, dz)]
        return type(self)(table)

    def to_records(self) -> str:
        lines = []
        for state, vectors in self._logits.items():
            for p, z in enumerate(vectors):
                lines.append(json.dumps({"state_id": state, "position": p, "logits": z.tolist()}))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_records(cls, text: str) -> "FactoredStepPolicy":
        table: dict[str, dict[int, list[float]]] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            d = json.loads(line)
            table.setdefault(d["state_id"], {})[d["position"]] = d["logits"]
        logits = {}
        for state, by_pos in table.items():
            if sorted(by_pos) != list(range(len(by_pos))):
                raise ValueError(f"state {state!r} has non-contiguous positions {sorted(by_pos)}")
            logits[state] = [np.array(by_pos[p], dtype=np.float64) for p in range(len(by_pos))]
        return cls(logits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FactoredStepPolicy):
            return NotImplemented
        if self._logits.keys() != other._logits.keys():
            return False
        for state, vectors in self._logits.items():
            theirs = other._logits[state]
            if len(vectors) != len(theirs) or not all(np.array_equal(a, b) for a, b in zip(vectors, theirs)):
                return False
        return True

    __hash__ = None  # type: ignore[assignment]


class TabularSoftmaxPolicy(FactoredStepPolicy):
    """Single-position policy: one logit vector per state, integer actions."""

    def __init__(self, logits: Mapping[str, object]):
        vectors = {}
        for state, z in logits.items():
            if isinstance(z, (list, tuple)) and z and isinstance(z[0], np.ndarray):
                vectors[state] = z
            else:
                vectors[state] = [np.asarray(z, dtype=np.float64)]
        super().__init__(vectors)
        for state, v in self._logits.items():
            if len(v) != 1:
                raise ValueError(f"tabular policy state {state!r} has {len(v)} positions")

    def action_distribution(self, state: str) -> np.ndarray:
        return self.distributions(state)[0]

    def policy_entropy(self, state: str) -> float:
        return self.position_entropies(state)[0]

    def score_logits(self, state: str, k: int) -> np.ndarray:
        return self.score(state, (k,))[0]

    def action_log_prob(self, state: str, k: int) -> float:
        return self.log_prob(state, (k,))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], PROB_FLOOR)))))


def state_kl(old: FactoredStepPolicy, new: FactoredStepPolicy, state: str) -> float:
    """KL between the composite-action distributions; positions are independent so KLs add."""
    return sum(kl_divergence(p, q) for p, q in zip(old._entry(state).probs, new._entry(state).probs))
