"""Command line entry point: ``slim3d {scene,mask,stats,check,bench,ablate}``.

Exit codes: 0 success, 1 verification or training failure, 2 usage or
configuration error. ``SLIM_THREADS`` caps how many ablation cells run at once.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bench import bench_csv, run_bench
from .checks import run_checks
from .errors import ConfigurationError, SceneFormatError, SlimError, TrainingFailure
from .masks import compose, format_stats_line, load_mask, parse_strategy, save_mask, sparsity_stats
from .scene import load_layout, load_scene, save_scene
from .scene_gen import DEFAULT_TASK_RECIPE, generate_scene, load_recipe
from .train import TrainConfig, ablation_task_sets, toy_train

ABLATION_ROWS = ("causal", "fullall", "full", "diag", "fixedn:5", "geo", "causal+inst", "geo+inst")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def slim_threads() -> int:
    raw = os.environ.get("SLIM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"SLIM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("SLIM_THREADS must be at least 1")
    return n


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- subcommands ------------------------------------------------------------------

def cmd_scene(args) -> int:
    recipe = load_recipe(args.recipe) if args.recipe else DEFAULT_TASK_RECIPE
    if args.seed is not None:
        recipe = recipe.with_seed(args.seed)
    scene = generate_scene(recipe)
    save_scene(scene, args.out)
    print(f"wrote {scene.N} objects to {args.out}")
    return EXIT_OK


def cmd_mask(args) -> int:
    scene = load_scene(args.scene)
    layout = load_layout(args.layout)
    strategy = parse_strategy(args.strategy, args.kmin, args.kmax, args.nfixed)
    mask = compose(scene, layout, strategy)
    save_mask(mask, args.out)
    print(f"{strategy.name}: " + format_stats_line(sparsity_stats(mask)))
    return EXIT_OK


def cmd_stats(args) -> int:
    layout = load_layout(args.layout)
    mask = load_mask(args.mask, layout)
    print(format_stats_line(sparsity_stats(mask)))
    return EXIT_OK


def cmd_check(args) -> int:
    report = run_checks(seed=args.seed, cases=args.cases, inject_fault=args.fault == "inject-grad")
    text = report.text()
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_bench(args) -> int:
    strategies = [parse_strategy(s, args.kmin, args.kmax, args.nfixed) for s in args.strategies.split(",")]
    rows = run_bench(args.sizes, strategies, trials=args.trials, warmup=args.warmup, seed=args.seed)
    text = bench_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _ablation_seed(job):
    """Every strategy for one seed; the task sets are built once and shared."""
    specs, seed, config = job
    train_set, eval_set = ablation_task_sets(seed, config)
    out = []
    for spec in specs:
        try:
            r = toy_train(parse_strategy(spec), seed, config, train_set=train_set, eval_set=eval_set)
            out.append((spec, seed, r.accuracy, r.final_loss, ""))
        except TrainingFailure as e:
            out.append((spec, seed, float("nan"), float("nan"), str(e)))
    return out


def run_ablation(seeds, config: TrainConfig, rows=ABLATION_ROWS, workers: int = 1) -> list:
    """Train every (strategy, seed) cell; results come back in row-major order."""
    jobs = [(tuple(rows), s, config) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_ablation_seed, jobs))
    else:
        per_seed = [_ablation_seed(j) for j in jobs]
    return [per_seed[j][i] for i in range(len(rows)) for j in range(len(seeds))]


def ablation_csv(cells) -> str:
    lines = ["strategy,label,seed,accuracy,final_loss,error"]
    for spec, seed, acc, loss, err in cells:
        lines.append(f"{spec},{parse_strategy(spec).label},{seed},{acc:.6f},{loss:.6g},{err}")
    return "\n".join(lines) + "\n"


def ablation_table(cells) -> str:
    by_row = {}
    for spec, _seed, acc, _loss, _err in cells:
        by_row.setdefault(spec, []).append(acc)
    out = [f"{'row':<6}{'strategy':<14}{'accuracy (mean ± sd)':>24}{'seeds':>7}"]
    for spec, accs in by_row.items():
        a = np.array(accs, dtype=float) * 100
        ok = a[np.isfinite(a)]
        cell = f"{ok.mean():6.2f} ± {ok.std(ddof=1) if ok.size > 1 else 0.0:5.2f}" if ok.size else "failed"
        out.append(f"{parse_strategy(spec).label:<6}{spec:<14}{cell:>24}{ok.size:>7}")
    return "\n".join(out) + "\n"


def cmd_ablate(args) -> int:
    overrides = {"steps": args.steps, "n_train": args.n_train, "n_eval": args.n_eval}
    config = replace(TrainConfig(), **{k: v for k, v in overrides.items() if v is not None})
    rows = args.strategies.split(",") if args.strategies else list(ABLATION_ROWS)
    for spec in rows:
        parse_strategy(spec)
    seeds = args.seed_list if args.seed_list else list(range(args.seeds))
    cells = run_ablation(seeds, config, rows, workers=slim_threads())
    csv = ablation_csv(cells)
    if args.out:
        Path(args.out).write_text(csv, encoding="utf-8")
    sys.stdout.write(csv + "\n" + ablation_table(cells))
    failed = [c for c in cells if c[4]]
    for spec, seed, *_rest, err in failed:
        print(f"training failed for {spec} seed {seed}: {err}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# -- parser -------------------------------------------------------------------------

def _add_strategy_args(p, default="geo+inst"):
    p.add_argument("--strategy", default=default, help="causal|fullall|full|diag|fixedn:<k>|geo, optional +inst")
    _add_bounds(p)


def _add_bounds(p):
    p.add_argument("--kmin", type=int, default=2)
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--nfixed", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="slim3d", description="Geometry-adaptive attention masks for object-centric decoders")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scene", help="generate a synthetic scene file")
    p.add_argument("--recipe", help="key=value recipe file (default: built-in task recipe)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scene)

    p = sub.add_parser("mask", help="build a SLIMMASK file for a scene and layout")
    p.add_argument("--scene", required=True)
    p.add_argument("--layout", required=True)
    _add_strategy_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("stats", help="sparsity statistics of a SLIMMASK file")
    p.add_argument("--mask", required=True)
    p.add_argument("--layout", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("check", help="run the verification suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--fault", choices=["inject-grad"])
    p.add_argument("--report", help="also write the report to this file")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", help="time dense vs sparse masked attention")
    p.add_argument("--sizes", type=_int_list, default=[64, 128, 256, 512])
    p.add_argument("--strategies", default="geo,fixedn:5,full")
    _add_bounds(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate", help="train the toy decoder under each strategy")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, 0..n-1")
    p.add_argument("--seed-list", type=_int_list, help="explicit seeds, overrides --seeds")
    p.add_argument("--steps", type=int, help="training steps per cell")
    p.add_argument("--n-train", type=int, help="training examples per seed")
    p.add_argument("--n-eval", type=int, help="held-out examples per seed")
    p.add_argument("--strategies", help="comma-separated subset of rows")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ConfigurationError, SceneFormatError, FileNotFoundError) as e:
        print(f"slim3d: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SlimError as e:
        print(f"slim3d: failure: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
