"""Entropy-modulated advantages.

For step ``t`` of trajectory ``i`` with outcome advantage ``A_i``::

    A_mod(i, t) = A_i * g(H_t) + zeta * f(H_{t+1})

where ``g`` is ``exp(-k * H_norm)`` divided by its mean over every step in the
batch (so the batch mean of ``g`` is one) and ``f(H) = exp(-k' * H_norm)`` is
looked up on the *next* step of the same trajectory. The final step of a
trajectory gets no bonus. ``A_final`` subtracts the per-step batch mean of
``A_mod``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import AdvantageRecord


class Ablation(str, enum.Enum):
    BASELINE = "baseline"
    SCALING_ONLY = "scaling_only"
    BONUS_ONLY = "bonus_only"
    FULL = "full"

    @property
    def uses_scaling(self) -> bool:
        return self in (Ablation.SCALING_ONLY, Ablation.FULL)

    @property
    def uses_bonus(self) -> bool:
        return self in (Ablation.BONUS_ONLY, Ablation.FULL)


class EntropyPipelineMissing(ValueError):
    pass


class EmptyAdvantageBatch(ValueError):
    pass


@dataclass(frozen=True)
class ModulationParams:
    k: float = 1.0
    k_prime: float = 1.0
    zeta: float = 0.05
    epsilon: float = 1e-8

    def __post_init__(self):
        for name in ("k", "k_prime", "zeta", "epsilon"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    def effective(self, ablation: Ablation | str) -> "ModulationParams":
        """Parameters with the ablated parts switched off (g == 1 is k = 0; no bonus is zeta = 0)."""
        ablation = Ablation(ablation)
        return replace(
            self,
            k=self.k if ablation.uses_scaling else 0.0,
            zeta=self.zeta if ablation.uses_bonus else 0.0,
        )


def scaling_factors(h_norm: Sequence[float], k: float, epsilon: float = 1e-8) -> np.ndarray:
    """Self-calibrating scale ``exp(-k h) / mean(exp(-k h))`` over the batch.

    ``epsilon`` only guards the denominator from vanishing; it is not added,
    so the batch mean of the result stays exactly one.
    """
    h = np.asarray(h_norm, dtype=np.float64)
    if h.size == 0:
        raise EmptyAdvantageBatch("scaling factors need at least one step")
    base = np.exp(-k * h)
    return base / max(float(base.mean()), epsilon)


def clarity_bonus(h_norm_next, k_prime: float):
    """``exp(-k' * H_norm)`` of the next step; works on scalars and arrays."""
    if np.ndim(h_norm_next) == 0:
        return math.exp(-k_prime * float(h_norm_next))
    return np.exp(-k_prime * np.asarray(h_norm_next, dtype=np.float64))


def modulate(
    h_norm: Sequence[Sequence[float]],
    a_outcome: Sequence[float],
    params: ModulationParams,
    ablation: Ablation | str = Ablation.FULL,
    *,
    h_steps: Optional[Sequence[Sequence[float]]] = None,
    traj_indices: Optional[Sequence[int]] = None,
) -> list[AdvantageRecord]:
    """Build AdvantageRecords with ``a_mod`` filled, one per step.

    ``h_norm[i]`` holds the normalized entropies of trajectory ``i``'s steps in
    order; the normalization must already have been done over the whole batch.
    """
    if h_norm is None or len(h_norm) != len(a_outcome):
        raise EntropyPipelineMissing("need one normalized-entropy sequence per trajectory")
    if any(len(h) == 0 for h in h_norm):
        raise EntropyPipelineMissing("a trajectory has no normalized entropies")
    if h_steps is not None and [len(h) for h in h_steps] != [len(h) for h in h_norm]:
        raise EntropyPipelineMissing("raw and normalized entropies disagree in shape")
    eff = params.effective(ablation)
    flat = np.concatenate([np.asarray(h, dtype=np.float64) for h in h_norm])
    g_flat = scaling_factors(flat, eff.k, eff.epsilon)
    f_flat = clarity_bonus(flat, eff.k_prime)

    records = []
    offset = 0
    for i, (h, a) in enumerate(zip(h_norm, a_outcome)):
        n = len(h)
        idx = traj_indices[i] if traj_indices is not None else i
        for t in range(n):
            g = float(g_flat[offset + t])
            f_next = float(f_flat[offset + t + 1]) if t + 1 < n else None
            a_mod = float(a) * g
            if f_next is not None:
                a_mod += eff.zeta * f_next
            records.append(AdvantageRecord(
                traj_index=idx,
                step_index=t,
                a_outcome=float(a),
                h_step=float(h_steps[i][t]) if h_steps is not None else math.nan,
                h_norm=float(h[t]),
                g=g,
                f_next=f_next,
                a_mod=a_mod,
            ))
        offset += n
    return records


def final_normalize(a_mod: Sequence[float]) -> np.ndarray:
    """Subtract the per-step batch mean."""
    a = np.asarray(a_mod, dtype=np.float64)
    if a.size == 0:
        raise EmptyAdvantageBatch("final normalization needs at least one step")
    return a - a.mean()


def finalize(records: Sequence[AdvantageRecord]) -> list[AdvantageRecord]:
    a_final = final_normalize([r.a_mod for r in records])
    return [replace(r, a_final=float(v)) for r, v in zip(records, a_final)]
