"""Step-level entropy and stateless batch min-max normalization."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

DEFAULT_EPSILON = 1e-8


class EmptyStep(ValueError):
    pass


class EmptyEntropyBatch(ValueError):
    pass


def step_entropy(token_entropies: Sequence[float]) -> float:
    """Average of the per-sub-token entropies of one step."""
    if len(token_entropies) == 0:
        raise EmptyStep("a step needs at least one token entropy")
    return math.fsum(token_entropies) / len(token_entropies)


def minmax_normalize(entropies: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Map ``H`` to ``(H - min) / (max - min + epsilon)`` over the whole pool.

    The pool is whatever the caller passes: in training it is every surviving
    step of the mini-batch, with no per-trajectory or per-group split.
    """
    h = np.asarray(entropies, dtype=np.float64)
    if h.size == 0:
        raise EmptyEntropyBatch("cannot normalize an empty entropy pool")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    lo, hi = h.min(), h.max()
    return (h - lo) / (hi - lo + epsilon)
