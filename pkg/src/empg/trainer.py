"""Grouped rollouts, the advantage pipeline, and plain policy-gradient updates.

Run directory layout written by :func:`train`::

    config.echo                 fully resolved config (loadable with config.load)
    metrics.jsonl               one IterationMetrics per line, wall_time excluded
    timing.jsonl                {"iteration": n, "wall_time": seconds} per line
    ledger/iter_<n>.records     AdvantageRecords of iteration n (core codec)
    ledger/iter_<n>.batch       the batch those records index into
    checkpoints/iter_<n>        policy logits, one (state_id, position, logits) per line

``metrics.jsonl`` is bitwise reproducible from (config, seed); wall-clock
time lives in ``timing.jsonl`` for that reason.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import config as config_mod
from . import envs
from .config import RunConfig
from .core import AdvantageRecord, Batch, Step, Trajectory, encode_batch, encode_records, validate_batch
from .entropy import minmax_normalize, step_entropy
from .modulation import finalize, modulate
from .outcome import filter_groups, grpo_advantages, trajectory_return
from .policy import FactoredStepPolicy, state_kl
from .theory import gradient_assembly_identity

log = logging.getLogger(__name__)


class AllGroupsFiltered(RuntimeError):
    """Every group had identical rewards, so this iteration carries no signal."""

    def __init__(self, dropped: int):
        super().__init__(f"all {dropped} group(s) had zero reward variance")
        self.dropped = dropped


class NonFiniteGradient(FloatingPointError):
    pass


class EnvFailure(RuntimeError):
    pass


class RunDirectoryNotEmpty(FileExistsError):
    pass


# -- rollouts --------------------------------------------------------------


def derive_seed(*parts: int) -> int:
    """Stable 32-bit seed from integer parts, independent of scheduling order."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def init_policy(cfg: RunConfig) -> FactoredStepPolicy:
    states = cfg.env.observations()
    if cfg.init_scale > 0:
        rng = np.random.default_rng(derive_seed(cfg.seed, 0xC0FFEE))
        return FactoredStepPolicy.random(states, cfg.env.vocab_sizes, cfg.init_scale, rng)
    return FactoredStepPolicy.uniform(states, cfg.env.vocab_sizes)


def rollout(policy: FactoredStepPolicy, spec: envs.EnvSpec, env_seed: int, seed: int,
            task_id: int = 0, group_id: int = 0) -> Trajectory:
    """Play one episode; the policy draws from ``default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    state = envs.reset(spec, env_seed)
    steps = []
    while not state.done:
        if len(steps) >= spec.horizon:
            raise EnvFailure(f"{spec} did not terminate within its horizon")
        action, entropies, logp = policy.sample_step(state.observation_id, rng)
        steps.append(Step(state.observation_id, action, entropies, logp))
        state, _ = envs.step(spec, state, action)
    return Trajectory(task_id, group_id, seed, tuple(steps), envs.terminal_reward(state))


def collect_batch(policy: FactoredStepPolicy, cfg: RunConfig, iteration: int = 0) -> Batch:
    """``tasks_per_batch`` groups of ``group_size`` rollouts.

    Task ``j`` uses env seed ``derive_seed(seed, iteration, j)`` for every
    member; member ``m`` samples actions from ``derive_seed(seed, iteration, j, m)``.
    """
    trajectories = []
    for task in range(cfg.tasks_per_batch):
        env_seed = derive_seed(cfg.seed, iteration, task)
        for member in range(cfg.group_size):
            seed = derive_seed(cfg.seed, iteration, task, member)
            trajectories.append(rollout(policy, cfg.env, env_seed, seed, task_id=task, group_id=task))
    return Batch.from_trajectories(trajectories)


# -- advantage pipeline ----------------------------------------------------


@dataclass
class PipelineResult:
    records: list[AdvantageRecord]
    surviving: list[int]
    dropped_groups: int
    group_advantages: dict[int, np.ndarray] = field(default_factory=dict)


def run_advantage_pipeline(batch: Batch, cfg: RunConfig) -> PipelineResult:
    """Returns -> group filter -> GRPO -> step entropies -> min-max -> g, f -> A_mod -> A_final."""
    validate_batch(batch)
    rewards = {g: [trajectory_return(batch.trajectories[i]) for i in members]
               for g, members in batch.groups.items()}
    if cfg.filter_groups:
        kept, dropped = filter_groups(rewards)
    else:
        kept, dropped = rewards, 0
    if not kept:
        raise AllGroupsFiltered(dropped)

    a_outcome: dict[int, float] = {}
    group_adv = {}
    for g, r in kept.items():
        adv = grpo_advantages(r, cfg.epsilon)
        group_adv[g] = adv
        for i, a in zip(batch.groups[g], adv):
            a_outcome[i] = float(a)
    surviving = sorted(a_outcome)

    h_steps = [[step_entropy(s.token_entropies) for s in batch.trajectories[i].steps] for i in surviving]
    flat_norm = minmax_normalize([h for hs in h_steps for h in hs], cfg.epsilon)
    h_norm, offset = [], 0
    for hs in h_steps:
        h_norm.append(flat_norm[offset:offset + len(hs)])
        offset += len(hs)

    records = modulate(h_norm, [a_outcome[i] for i in surviving], cfg.modulation, cfg.ablation,
                       h_steps=h_steps, traj_indices=surviving)
    return PipelineResult(finalize(records), surviving, dropped, group_adv)


# -- updates ---------------------------------------------------------------


def policy_gradient(policy: FactoredStepPolicy, records: Sequence[AdvantageRecord], batch: Batch,
                    cfg: RunConfig) -> dict[str, list[np.ndarray]]:
    """Per-state logit gradient of the single-epoch surrogate.

    Vanilla: ``sum a_final * score``. Clipped: each step's weight becomes
    ``a_final * rho`` with ``rho = pi / pi_old``, and is zeroed where the
    clipped branch of ``min(rho A, clip(rho) A)`` is active.
    """
    grad: dict[str, list[np.ndarray]] = {}
    for r in records:
        step = batch.trajectories[r.traj_index].steps[r.step_index]
        weight = r.a_final
        if cfg.update_rule == "clipped":
            rho = math.exp(policy.log_prob(step.state_id, step.action) - step.old_log_prob)
            if (weight > 0 and rho > 1 + cfg.clip_high) or (weight < 0 and rho < 1 - cfg.clip_low):
                continue
            weight *= rho
        score = policy.score(step.state_id, step.action)
        acc = grad.get(step.state_id)
        if acc is None:
            grad[step.state_id] = [weight * s for s in score]
        else:
            for a, s in zip(acc, score):
                a += weight * s
    return grad


def update_policy(policy: FactoredStepPolicy, records: Sequence[AdvantageRecord], batch: Batch,
                  cfg: RunConfig, learning_rate: Optional[float] = None) -> tuple[FactoredStepPolicy, float]:
    """One gradient-ascent step; returns the new policy and the L2 norm of the logit change."""
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    grad = policy_gradient(policy, records, batch, cfg)
    deltas = {s: [lr * g for g in vecs] for s, vecs in grad.items()}
    sq = 0.0
    for vecs in deltas.values():
        for d in vecs:
            if not np.all(np.isfinite(d)):
                raise NonFiniteGradient("policy update contains non-finite values")
            sq += float(np.dot(d, d))
    return policy.apply_deltas(deltas), math.sqrt(sq)


def kl_to_previous(old: FactoredStepPolicy, new: FactoredStepPolicy, states: Sequence[str]) -> float:
    """Mean over ``states`` of KL(old(.|s) || new(.|s))."""
    states = list(dict.fromkeys(states))
    if not states:
        return 0.0
    return float(np.mean([state_kl(old, new, s) for s in states]))


# -- training loop ---------------------------------------------------------


@dataclass
class IterationMetrics:
    iteration: int
    success_rate: float
    mean_step_entropy: float
    mean_abs_a_final: float
    kl_to_previous: float
    dropped_groups: int
    update_norm: float
    skipped: bool
    wall_time: float = 0.0

    def deterministic_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_time")
        return d


@dataclass
class IterationOutcome:
    metrics: IterationMetrics
    batch: Batch
    records: list[AdvantageRecord]
    policy_before: FactoredStepPolicy
    policy_after: FactoredStepPolicy


def train_iterations(cfg: RunConfig, policy: Optional[FactoredStepPolicy] = None,
                     callback: Optional[Callable[[IterationOutcome], None]] = None
                     ) -> tuple[FactoredStepPolicy, list[IterationMetrics]]:
    """Run ``cfg.iterations`` iterations in memory."""
    policy = init_policy(cfg) if policy is None else policy
    history = []
    eff_zeta = cfg.effective_modulation.zeta
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        batch = collect_batch(policy, cfg, it)
        rewards = [t.terminal_reward for t in batch.trajectories]
        all_h = [step_entropy(s.token_entropies) for t in batch.trajectories for s in t.steps]
        before = policy
        records: list[AdvantageRecord] = []
        try:
            result = run_advantage_pipeline(batch, cfg)
        except AllGroupsFiltered as exc:
            dropped, skipped, norm = exc.dropped, True, 0.0
        else:
            records, dropped, skipped = result.records, result.dropped_groups, False
            if cfg.debug_checks:
                err = gradient_assembly_identity(records, batch, policy, eff_zeta)
                if err >= 1e-10:
                    raise AssertionError(f"gradient assembly mismatch {err:.3e} at iteration {it}")
            lr = cfg.learning_rate
            if cfg.lr_schedule == "linear":
                lr *= 1.0 - it / max(cfg.iterations, 1)
            policy, norm = update_policy(policy, records, batch, cfg, lr)
        visited = [s.state_id for t in batch.trajectories for s in t.steps]
        metrics = IterationMetrics(
            iteration=it,
            success_rate=sum(rewards) / len(rewards),
            mean_step_entropy=float(np.mean(all_h)),
            mean_abs_a_final=float(np.mean([abs(r.a_final) for r in records])) if records else 0.0,
            kl_to_previous=0.0 if skipped else kl_to_previous(before, policy, visited),
            dropped_groups=dropped,
            update_norm=norm,
            skipped=skipped,
            wall_time=time.perf_counter() - t0,
        )
        history.append(metrics)
        if skipped:
            log.debug("iteration %d skipped: all groups filtered", it)
        if callback is not None:
            callback(IterationOutcome(metrics, batch, records, before, policy))
    return policy, history


def _prepare_run_dir(run_dir: Path) -> None:
    if run_dir.exists() and any(run_dir.iterdir()):
        raise RunDirectoryNotEmpty(f"refusing to write into non-empty run directory {run_dir}")
    (run_dir / "ledger").mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)


def _write_new(path: Path, text: str) -> None:
    with open(path, "x") as fh:
        fh.write(text)


def train(cfg: RunConfig, run_dir: str | Path) -> tuple[Path, list[IterationMetrics]]:
    """Train and persist metrics, ledgers and checkpoints under ``run_dir``."""
    run_dir = Path(run_dir)
    _prepare_run_dir(run_dir)
    _write_new(run_dir / "config.echo", config_mod.echo(cfg))
    policy = init_policy(cfg)
    _write_new(run_dir / "checkpoints" / "iter_0", policy.to_records())
    metrics_fh = open(run_dir / "metrics.jsonl", "x")
    timing_fh = open(run_dir / "timing.jsonl", "x")

    def persist(out: IterationOutcome) -> None:
        it = out.metrics.iteration
        metrics_fh.write(json.dumps(out.metrics.deterministic_dict()) + "\n")
        timing_fh.write(json.dumps({"iteration": it, "wall_time": out.metrics.wall_time}) + "\n")
        if it == 0 or it % cfg.ledger_every == 0:
            _write_new(run_dir / "ledger" / f"iter_{it}.records", encode_records(out.records))
            _write_new(run_dir / "ledger" / f"iter_{it}.batch", encode_batch(out.batch))
        done = it + 1
        if done % cfg.checkpoint_every == 0 or done == cfg.iterations:
            _write_new(run_dir / "checkpoints" / f"iter_{done}", out.policy_after.to_records())

    try:
        _, history = train_iterations(cfg, policy, persist)
    finally:
        metrics_fh.close()
        timing_fh.close()
    return run_dir, history


def read_metrics(run_dir: str | Path) -> list[dict]:
    with open(Path(run_dir) / "metrics.jsonl") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def latest_checkpoint(run_dir: str | Path) -> Path:
    ckpts = sorted((Path(run_dir) / "checkpoints").glob("iter_*"), key=lambda p: int(p.name[5:]))
    if not ckpts:
        raise FileNotFoundError(f"no checkpoints in {run_dir}")
    return ckpts[-1]


# -- random fixtures for the verification suite ----------------------------


def random_batch_and_records(rng: np.random.Generator, *, k: Optional[float] = None,
                             zeta: Optional[float] = None
                             ) -> tuple[Batch, list[AdvantageRecord], FactoredStepPolicy, float]:
    """A random multi-group batch run through the full pipeline.

    Returns ``(batch, records, policy, effective zeta)``.
    """
    sizes = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 4)))]
    states = [f"s{i}" for i in range(int(rng.integers(2, 7)))]
    policy = FactoredStepPolicy({s: [rng.normal(0.0, 1.5, n) for n in sizes] for s in states})
    trajectories = []
    n_groups = int(rng.integers(1, 4))
    for g in range(n_groups):
        m = int(rng.integers(2, 5))
        rewards = [int(r) for r in rng.integers(0, 2, m)]
        if len(set(rewards)) == 1:
            rewards[0] = 1 - rewards[0]
        for j in range(m):
            steps = []
            for _ in range(int(rng.integers(1, 7))):
                s = states[int(rng.integers(len(states)))]
                action, ents, logp = policy.sample_step(s, rng)
                steps.append(Step(s, action, ents, logp))
            trajectories.append(Trajectory(g, g, j, tuple(steps), rewards[j]))
    batch = Batch.from_trajectories(trajectories)
    cfg = RunConfig(
        k=float(rng.uniform(0.0, 3.0)) if k is None else k,
        k_prime=float(rng.uniform(0.0, 3.0)),
        zeta=float(rng.uniform(0.0, 0.5)) if zeta is None else zeta,
    )
    result = run_advantage_pipeline(batch, cfg)
    return batch, result.records, policy, cfg.effective_modulation.zeta
