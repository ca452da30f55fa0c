"""Offline diagnostics over run directories.

Tables are tab-separated with a one-line header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import config as config_mod
from .core import decode_batch
from .entropy import step_entropy
from .policy import FactoredStepPolicy
from .trainer import latest_checkpoint, read_metrics

N_BINS = 20


class EmptyLedger(ValueError):
    pass


class MismatchedGrids(ValueError):
    pass


@dataclass(frozen=True)
class PercentileBin:
    lower: float
    upper: float
    mean_entropy_change: float
    count: int


def percentile_bins(values: Sequence[float], n_bins: int = N_BINS) -> np.ndarray:
    """Bin index of each value by its percentile rank among the *distinct* values.

    The smallest distinct value has rank 0 and the largest rank 100, so
    duplicating the input never moves a value to another bin.
    """
    v = np.asarray(values, dtype=np.float64)
    uniq = np.unique(v)
    pos = np.searchsorted(uniq, v)
    if uniq.size == 1:
        return np.zeros(v.size, dtype=int)
    return np.minimum(pos * n_bins // (uniq.size - 1), n_bins - 1)


def entropy_change_by_percentile(steps: Sequence[tuple[str, float]], policy_after: FactoredStepPolicy,
                                 n_bins: int = N_BINS) -> list[PercentileBin]:
    """Mean (H_after - H_before) per 5% band of initial step entropy.

    ``steps`` are ``(state_id, H_before)`` pairs; ``H_after`` is the step
    entropy of the same state under ``policy_after``. Empty bins report
    ``nan`` with count 0.
    """
    if not steps:
        raise EmptyLedger("no steps to analyze")
    before = np.array([h for _, h in steps], dtype=np.float64)
    after = np.array([policy_after.step_entropy(s) for s, _ in steps])
    change = after - before
    idx = percentile_bins(before, n_bins)
    width = 100.0 / n_bins
    bins = []
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        mean = float(change[mask].mean()) if count else math.nan
        bins.append(PercentileBin(b * width, (b + 1) * width, mean, count))
    return bins


def first_iteration_steps(run_dir: str | Path) -> list[tuple[str, float]]:
    """``(state_id, rollout-time step entropy)`` for every step of iteration 0."""
    path = Path(run_dir) / "ledger" / "iter_0.batch"
    if not path.exists():
        raise EmptyLedger(f"{path} not found")
    batch = decode_batch(path.read_text())
    return [(s.state_id, step_entropy(s.token_entropies)) for t in batch.trajectories for s in t.steps]


def analyze_entropy_change(run_dir: str | Path) -> list[PercentileBin]:
    policy = FactoredStepPolicy.from_records(latest_checkpoint(run_dir).read_text())
    return entropy_change_by_percentile(first_iteration_steps(run_dir), policy)


# -- run comparison --------------------------------------------------------


@dataclass
class Comparison:
    metric: str
    rows: list[tuple[int, str, int, float]]       # (iteration, label, seed, value)
    final_means: dict[tuple[str, int], float]     # (label, seed) -> mean over last 10%


def final_window(values: Sequence[float], fraction: float = 0.1) -> float:
    n = len(values)
    if n == 0:
        return math.nan
    w = max(1, math.ceil(fraction * n))
    return float(np.mean(values[-w:]))


def run_identity(run_dir: str | Path) -> tuple[str, int]:
    cfg = config_mod.load(Path(run_dir) / "config.echo")
    return cfg.ablation.value, cfg.seed


def compare_runs(run_dirs: Sequence[str | Path], metric: str = "success_rate",
                 labels: Optional[Sequence[str]] = None) -> Comparison:
    if len(run_dirs) < 2:
        raise ValueError("need at least two runs to compare")
    grid = None
    rows = []
    finals = {}
    for i, run in enumerate(run_dirs):
        label, seed = run_identity(run)
        if labels is not None:
            label = labels[i]
        metrics = read_metrics(run)
        its = [m["iteration"] for m in metrics]
        if grid is None:
            grid = its
        elif its != grid:
            raise MismatchedGrids(f"{run} has a different iteration grid")
        values = [float(m[metric]) for m in metrics]
        rows.extend((it, label, seed, v) for it, v in zip(its, values))
        finals[(label, seed)] = final_window(values)
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return Comparison(metric, rows, dict(sorted(finals.items())))


def format_table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    def cell(v):
        return repr(v) if isinstance(v, float) else str(v)
    lines = ["\t".join(header)]
    lines += ["\t".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def comparison_tables(cmp: Comparison) -> tuple[str, str]:
    """(long-format curve table, final-window summary table)."""
    curves = format_table(("iteration", "label", "seed", cmp.metric), cmp.rows)
    summary = format_table(("label", "seed", f"final_{cmp.metric}"),
                           ((label, seed, v) for (label, seed), v in cmp.final_means.items()))
    return curves, summary


def bins_table(bins: Sequence[PercentileBin]) -> str:
    return format_table(("lower", "upper", "mean_entropy_change", "count"),
                        ((b.lower, b.upper, b.mean_entropy_change, b.count) for b in bins))
