"""Command-line entry point: ``empg {verify,train,ablate,analyze,export}``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
Run directories default to ``$EMPG_OUTPUT_ROOT`` (or ``./runs``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import analysis, config as config_mod, theory, trainer
from .core import decode_batch, decode_records
from .envs import InvalidSpec
from .modulation import Ablation

OUTPUT_ROOT_VAR = "EMPG_OUTPUT_ROOT"
CONFIG_DIR = Path(__file__).parent / "configs"

log = logging.getLogger("empg")


class UsageError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_VAR, "runs"))


def find_config(name: Optional[str]) -> Optional[Path]:
    """A path as given, else a file of that name among the bundled configs."""
    if name is None:
        return None
    path = Path(name)
    if path.exists():
        return path
    for candidate in (CONFIG_DIR / name, CONFIG_DIR / f"{name}.cfg"):
        if candidate.exists():
            return candidate
    raise UsageError(f"config file {name!r} not found")


def load_config(args) -> config_mod.RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    return config_mod.load(find_config(args.config), overrides)


def default_run_name(cfg: config_mod.RunConfig) -> str:
    env = str(cfg.env).replace(" ", "").replace("(", "-").replace(")", "").replace(",", "-")
    return f"{env}_{cfg.ablation.value}_seed{cfg.seed}"


# -- subcommands -----------------------------------------------------------


def cmd_verify(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    results = theory.run_checks(mc_samples=args.samples, fault=1e-6 if args.inject_fault else 0.0,
                                seed=args.seed)
    print(f"{'check':<26}{'max error':>14}{'tolerance':>12}{'seconds':>10}  result")
    for r in results:
        print(f"{r.name:<26}{r.max_error:>14.3e}{r.tolerance:>12.1e}{r.seconds:>10.2f}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in results) else 1


def _train_one(cfg, out: Path) -> Path:
    print(f"run directory: {out.resolve()}")
    run_dir, history = trainer.train(cfg, out)
    if history:
        last = history[-1]
        print(f"iterations: {len(history)}  final success_rate: {last.success_rate:.3f}  "
              f"mean step entropy: {last.mean_step_entropy:.4f}")
    return run_dir


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = Path(args.out) if args.out else output_root() / default_run_name(cfg)
    _train_one(cfg, out)
    return 0


def cmd_ablate(args) -> int:
    base = load_config(args)
    seeds = config_mod._int_list(args.seeds) if args.seeds else base.seeds
    root = Path(args.out) if args.out else output_root() / f"ablate_{default_run_name(base)}"
    if root.exists() and any(root.iterdir()):
        raise trainer.RunDirectoryNotEmpty(f"refusing to write into non-empty directory {root}")
    print(f"ablation root: {root.resolve()}")
    runs = []
    for variant in Ablation:
        for seed in seeds:
            cfg = base.replace(ablation=variant, seed=seed)
            runs.append(_train_one(cfg, root / variant.value / f"seed_{seed}"))
    cmp = analysis.compare_runs(runs, args.metric)
    curves, summary = analysis.comparison_tables(cmp)
    (root / "comparison.tsv").write_text(curves)
    (root / "summary.tsv").write_text(summary)
    print(summary, end="")
    print(f"tables: {(root / 'comparison.tsv').resolve()}, {(root / 'summary.tsv').resolve()}")
    return 0


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "x") as fh:
            fh.write(text)
        print(f"wrote {Path(out).resolve()}")
    else:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    if args.kind == "entropy":
        if len(args.runs) != 1:
            raise UsageError("analyze entropy takes exactly one run directory")
        _emit(analysis.bins_table(analysis.analyze_entropy_change(args.runs[0])), args.out)
    else:
        cmp = analysis.compare_runs(args.runs, args.metric)
        curves, summary = analysis.comparison_tables(cmp)
        _emit(curves if not args.summary else summary, args.out)
    return 0


def cmd_export(args) -> int:
    run = Path(args.run)
    if args.what == "metrics":
        rows = trainer.read_metrics(run)
        if not rows:
            _emit("", args.out)
            return 0
        header = list(rows[0])
        _emit(analysis.format_table(header, ([r[h] for h in header] for r in rows)), args.out)
    else:
        it = args.iteration
        records = decode_records((run / "ledger" / f"iter_{it}.records").read_text())
        batch = decode_batch((run / "ledger" / f"iter_{it}.batch").read_text())
        header = ("traj_index", "step_index", "state_id", "a_outcome", "h_step", "h_norm", "g",
                  "f_next", "a_mod", "a_final")
        rows = []
        for r in records:
            state = batch.trajectories[r.traj_index].steps[r.step_index].state_id
            rows.append((r.traj_index, r.step_index, state, r.a_outcome, r.h_step, r.h_norm, r.g,
                         "" if r.f_next is None else r.f_next, r.a_mod, r.a_final))
        _emit(analysis.format_table(header, rows), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="empg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="numeric checks of the score-norm identities")
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples per probe")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    def run_args(p):
        p.add_argument("--config", help="config file (path or bundled name such as fork3x3)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train one run")
    run_args(p)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="baseline / scaling_only / bonus_only / full on the same seeds")
    run_args(p)
    p.add_argument("--seeds", help="comma-separated seeds (default: config 'seeds')")
    p.add_argument("--metric", default="success_rate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="entropy-percentile change or run comparison")
    p.add_argument("kind", choices=("entropy", "compare"))
    p.add_argument("runs", nargs="+")
    p.add_argument("--metric", default="success_rate")
    p.add_argument("--summary", action="store_true", help="final-window means instead of curves")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export", help="dump metrics or an iteration's advantage ledger as TSV")
    p.add_argument("--run", required=True)
    p.add_argument("--what", choices=("metrics", "ledger"), default="metrics")
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, config_mod.ConfigError, InvalidSpec) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileExistsError, FileNotFoundError, analysis.MismatchedGrids, analysis.EmptyLedger) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
