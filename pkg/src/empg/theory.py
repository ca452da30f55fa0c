"""Numeric checks of the score-norm / Renyi-2 coupling and of gradient assembly.

For a softmax over logits ``z`` with probabilities ``pi``, the score of action
``k`` is ``e_k - pi``. Its squared norm is ``1 - 2 pi_k + sum(pi^2)`` and its
expectation under ``pi`` is ``1 - sum(pi^2) = 1 - exp(-H2(pi))``.

Random probes are drawn as ``softmax(x)`` with ``x ~ N(0, I_n)``, using
``numpy.random.default_rng(seed)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import AdvantageRecord, Batch
from .policy import FactoredStepPolicy


class PipelineNotRun(ValueError):
    pass


@dataclass(frozen=True)
class PolicyProbe:
    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        if pi.ndim != 1 or pi.size < 2:
            raise ValueError("probe needs a probability vector of dimension >= 2")
        if abs(pi.sum() - 1.0) > 1e-12 or pi.min() < 0:
            raise ValueError("probe is not on the probability simplex")
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return self.pi.size


def random_simplex(n: int, rng: np.random.Generator) -> np.ndarray:
    x = np.exp(rng.standard_normal(n))
    return x / x.sum()


def score_vector(pi: np.ndarray, k: int) -> np.ndarray:
    """Explicit ``e_k - pi``; the oracle for the closed forms below."""
    s = -np.asarray(pi, dtype=np.float64)
    s[k] += 1.0
    return s


def per_action_norm_sq(probe: PolicyProbe, k: int) -> float:
    if not 0 <= k < probe.n:
        raise IndexError(f"action {k} outside [0, {probe.n})")
    return float(1.0 - 2.0 * probe.pi[k] + np.dot(probe.pi, probe.pi))


def expected_norm_sq(probe: PolicyProbe) -> float:
    return float(1.0 - np.dot(probe.pi, probe.pi))


def renyi2(probe: PolicyProbe) -> float:
    return float(-math.log(np.dot(probe.pi, probe.pi)))


def monte_carlo_norm_sq(probe: PolicyProbe, n_samples: int,
                        rng: np.random.Generator) -> tuple[float, float]:
    """Sample actions from ``pi`` and average their squared score norms.

    Returns ``(mean, standard error)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    ks = rng.choice(probe.n, size=n_samples, p=probe.pi)
    collision = float(np.dot(probe.pi, probe.pi))
    values = 1.0 - 2.0 * probe.pi[ks] + collision
    if n_samples == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_samples))


def finite_difference_score(policy: FactoredStepPolicy, state: str, action: Sequence[int],
                            h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``log_prob`` with respect to every logit of ``state``."""
    base = [np.array(z) for z in policy.logits(state)]
    grads = []
    for p, z in enumerate(base):
        g = np.zeros_like(z)
        for i in range(z.size):
            bumped = []
            for sign in (1.0, -1.0):
                vectors = [v.copy() for v in base]
                vectors[p][i] += sign * h
                bumped.append(FactoredStepPolicy({state: vectors}).log_prob(state, action))
            g[i] = (bumped[0] - bumped[1]) / (2 * h)
        grads.append(g)
    return grads


def _accumulate(grad: dict, state: str, weight: float, score: list[np.ndarray]) -> None:
    acc = grad.get(state)
    if acc is None:
        grad[state] = [weight * s for s in score]
    else:
        for a, s in zip(acc, score):
            a += weight * s


def gradient_assembly_identity(records: Sequence[AdvantageRecord], batch: Batch,
                               policy: FactoredStepPolicy, zeta: float) -> float:
    """Max |difference| between two assemblies of the logit-space gradient.

    (a) ``sum_t a_final(t) * score(t)``
    (b) ``sum_t A*g * score + sum_t zeta*f_next * score - mean_shift * sum_t score``
        with ``mean_shift`` recomputed from the components rather than read
        from ``a_mod``.

    ``zeta`` is the effective bonus weight (0 when the bonus is ablated).
    """
    if not records or any(math.isnan(r.a_final) for r in records):
        raise PipelineNotRun("records are missing or have no a_final")
    expected = sum(len(batch.trajectories[i]) for i in {r.traj_index for r in records})
    if expected != len(records):
        raise PipelineNotRun("records do not cover every step of their trajectories")

    direct: dict[str, list[np.ndarray]] = {}
    scaled: dict[str, list[np.ndarray]] = {}
    bonus: dict[str, list[np.ndarray]] = {}
    plain: dict[str, list[np.ndarray]] = {}
    components = []
    for r in records:
        step = batch.trajectories[r.traj_index].steps[r.step_index]
        score = policy.score(step.state_id, step.action)
        _accumulate(direct, step.state_id, r.a_final, score)
        _accumulate(scaled, step.state_id, r.a_outcome * r.g, score)
        b = zeta * r.f_next if r.f_next is not None else 0.0
        _accumulate(bonus, step.state_id, b, score)
        _accumulate(plain, step.state_id, 1.0, score)
        components.append(r.a_outcome * r.g + b)
    shift = float(np.mean(components))

    worst = 0.0
    for state, a_vecs in direct.items():
        for a, s, b, p in zip(a_vecs, scaled[state], bonus[state], plain[state]):
            assembled = s + b - shift * p
            worst = max(worst, float(np.max(np.abs(a - assembled))))
    return worst


# -- suite used by the ``verify`` command ----------------------------------


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _timed(name: str, tolerance: float, fn: Callable[[], float]) -> CheckResult:
    t0 = time.perf_counter()
    err = fn()
    return CheckResult(name, err, tolerance, time.perf_counter() - t0)


def check_renyi_identity(n_draws: int = 1000, seed: int = 0, fault: float = 0.0) -> float:
    """Worst |E||score||^2 - (1 - exp(-H2))| over random probes of dimension 2..64."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        probe = PolicyProbe(random_simplex(int(rng.integers(2, 65)), rng))
        lhs = expected_norm_sq(probe) + fault
        worst = max(worst, abs(lhs - (1.0 - math.exp(-renyi2(probe)))))
    return worst


def check_enumeration(n_draws: int = 1000, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        probe = PolicyProbe(random_simplex(int(rng.integers(2, 65)), rng))
        total = sum(probe.pi[k] * per_action_norm_sq(probe, k) for k in range(probe.n))
        worst = max(worst, abs(total - expected_norm_sq(probe)))
    return worst


def check_score_vector_norm(n_draws: int = 200, seed: int = 2) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        probe = PolicyProbe(random_simplex(int(rng.integers(2, 65)), rng))
        k = int(rng.integers(probe.n))
        explicit = float(np.sum(score_vector(probe.pi, k) ** 2))
        worst = max(worst, abs(per_action_norm_sq(probe, k) - explicit))
    return worst


def check_monte_carlo(n_samples: int = 100_000, seed: int = 3) -> float:
    """Largest |estimate - closed form| in units of the standard error (pass: < 3)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for pi in ([0.5, 0.5], [0.7, 0.2, 0.1], list(random_simplex(16, rng))):
        probe = PolicyProbe(np.asarray(pi))
        est, se = monte_carlo_norm_sq(probe, n_samples, rng)
        exact = expected_norm_sq(probe)
        worst = max(worst, abs(est - exact) / se if se > 0 else (0.0 if est == exact else math.inf))
    return worst


def check_score_gradients(n_draws: int = 100, seed: int = 4, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        sizes = [int(rng.integers(2, 9)) for _ in range(int(rng.integers(1, 4)))]
        policy = FactoredStepPolicy({"s": [rng.normal(0.0, 2.0, n) for n in sizes]})
        action = tuple(int(rng.integers(n)) for n in sizes)
        analytic = policy.score("s", action)
        numeric = finite_difference_score(policy, "s", action, h)
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in zip(analytic, numeric)))
    return worst


def check_gradient_assembly(n_batches: int = 50, seed: int = 5) -> float:
    from .trainer import random_batch_and_records  # local: trainer imports this module

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_batches):
        batch, records, policy, zeta = random_batch_and_records(rng)
        worst = max(worst, gradient_assembly_identity(records, batch, policy, zeta))
    return worst


def run_checks(mc_samples: int = 100_000, fault: float = 0.0,
               seed: Optional[int] = None) -> list[CheckResult]:
    """Run the whole suite; ``fault`` perturbs the closed-form side of the Renyi identity."""
    base = 0 if seed is None else seed
    return [
        _timed("renyi2_identity", 1e-10, lambda: check_renyi_identity(seed=base, fault=fault)),
        _timed("enumeration", 1e-12, lambda: check_enumeration(seed=base + 1)),
        _timed("score_vector_norm", 1e-12, lambda: check_score_vector_norm(seed=base + 2)),
        _timed("monte_carlo_sigmas", 3.0, lambda: check_monte_carlo(mc_samples, seed=base + 3)),
        _timed("score_finite_difference", 1e-6, lambda: check_score_gradients(seed=base + 4)),
        _timed("gradient_assembly", 1e-10, lambda: check_gradient_assembly(seed=base + 5)),
    ]
