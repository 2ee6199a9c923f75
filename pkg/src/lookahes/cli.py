"""``lookahes run|sweep|validate`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import os
import sys

import numpy as np

from .core import ConfigError, LookaheadError, set_threads
from .runner import RunAborted, __version__, compute_metrics, config_from_dict, run_experiment, with_override

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

CONFIG_HELP = """\
Config file (TOML). Tables and defaults:
  [env]          name="ackley" (ackley|ackley4|ackley20|ackley50|alpine|holdertable|levy|
                 styblinskitang|cosine8|hartmann6|syngp|syngp_discrete|image),
                 noise_sigma=0.0, path (image), blur_radius=50, categories=20, calib_n, env_seed=0
  [cost]         kind="euclidean" (euclidean|manhattan|spotlight|nonmarkov_euclidean), k=1.0,
                 p=2 (1 for manhattan), r=0.0 (0.1 for spotlight), d=0.0, m=0.0,
                 cost_noise_sigma=0.0, lam=1.0
  [acquisition]  kind="lookahes" (lookahes|msl|sr|ei|pi|ucb|kg), horizon=20, restarts=64,
                 lam (overrides cost.lam), mc_samples=8192, beta=2.0, tau=0.001,
                 n_features=1024, n_fantasy=16, kg_grid=256, kg_refine_steps=10,
                 msl_lr=0.01, baseline_maxiter=100, discrete_search_budget=2000,
                 spotlight_mode="project" (project|penalty)
  [surrogate]    kernel="matern52" (rbf|matern12|matern32|matern52), steps=200, lr=0.05,
                 init_lengthscale=0.3, init_signal_variance=1.0, init_noise_variance=0.01,
                 fit_mean=true
  [policy]       hidden=64, grad_steps=200, lr=0.001, vmf_kappa=0.0, vmf_magnitude=0.05,
                 action_mode="policy" (policy|free), warmup=false, warmup_steps=50, persist=true
  [run]          n_init=50, n_steps=100, start_point (default: worst initial point),
                 seeds=[0], out_dir="runs", record_wall_time=false
"""


def load_config(path: str):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    try:
        return config_from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(v) -> str:
    return format(float(v), ".17g")


def records_csv(result) -> str:
    dim = len(result.start)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + [f"x{i}" for i in range(dim)] + ["y", "step_cost", "cum_cost", "acq_value"]
               + [f"action{i}" for i in range(dim)] + ["regret", "wall_ms"])
    for r in result.records:
        w.writerow([str(r.step)] + [_fmt(v) for v in r.x] + [_fmt(r.y), _fmt(r.step_cost), _fmt(r.cum_cost),
                   _fmt(r.acq_value)] + [_fmt(v) for v in r.action] + [_fmt(r.regret), _fmt(r.wall_ms)])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def summary_dict(result, metrics) -> dict:
    config = dict(result.config)
    config["run"] = dict(config["run"], seeds=[result.seed])
    return _jsonable({
        "version": __version__,
        "seed": result.seed,
        "metrics": metrics,
        "final_action": result.final_action,
        "final_value": result.final_value,
        "final_regret": result.final_regret,
        "start": result.start,
        "n_records": len(result.records),
        "wall_seconds": result.wall_seconds,
        "error": result.error,
        "config": config,
    })


def trace_svg(result, path: str):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [r.step for r in result.records]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [r.y for r in result.records], label="observed value")
    ax.plot(steps, [r.regret for r in result.records], label="regret of action")
    ax.set_xlabel("step")
    ax.set_ylabel("value")
    ax.legend(loc="best")
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "lookahes", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_outputs(result, out_dir: str, metrics=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "records.csv"), "w", newline="") as fh:
        fh.write(records_csv(result))
    metrics = compute_metrics(result) if metrics is None else metrics
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary_dict(result, metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")
    trace_svg(result, os.path.join(out_dir, "trace.svg"))


def _threads(arg):
    if arg is not None:
        return int(arg)
    env = os.environ.get("LOOKAHES_THREADS")
    return int(env) if env else 1


def _run_one(cfg, seed, out_dir, quiet=True):
    """Run a seed and write its outputs; partial results are flushed on abort."""
    try:
        result = run_experiment(cfg, seed)
    except RunAborted as exc:
        write_outputs(exc.partial, out_dir)
        raise
    write_outputs(result, out_dir)
    return result


def _blas_single_thread():
    from threadpoolctl import threadpool_limits

    # fixed-order reductions: BLAS stays single-threaded whatever --threads says
    return threadpool_limits(limits=1)


def cmd_run(config_path: str, seed: int | None = None, out: str | None = None, threads: int | None = None) -> int:
    try:
        cfg = load_config(config_path)
        set_threads(_threads(threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = out or cfg.out_dir
    seeds = [seed] if seed is not None else list(cfg.seeds)
    try:
        with _blas_single_thread():
            if len(seeds) == 1:
                _run_one(cfg, seeds[0], out)
            else:
                results = [_run_one(cfg, s, os.path.join(out, f"seed_{s}")) for s in seeds]
                with open(os.path.join(out, "summary.json"), "w") as fh:
                    json.dump(_jsonable(compute_metrics(results[0], results[1:])), fh, indent=2, sort_keys=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LookaheadError, ArithmeticError, FloatingPointError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_grid(items) -> list:
    """``["acquisition.kind=ei,ucb", ...]`` -> ``[("acquisition.kind", ["ei", "ucb"]), ...]``."""
    grid = []
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} must look like table.key=v1,v2")
        key, vals = item.split("=", 1)
        grid.append((key.strip(), [_parse_value(v.strip()) for v in vals.split(",") if v.strip()]))
    return grid


def _cell_name(combo) -> str:
    if not combo:
        return "base"
    return "__".join(f"{k.split('.')[-1]}={v}" for k, v in combo).replace("/", "_")


def _sweep_cell(args):
    cfg, seed, out_dir = args
    with _blas_single_thread():
        return _run_one(cfg, seed, out_dir)


SWEEP_FIELDS = ["cell", "seed", "final_value", "value_scaled", "final_regret", "cumulative_regret",
                "cumulative_cost", "best_observed"]


def cmd_sweep(config_path: str, grid=(), out: str | None = None, threads: int | None = None,
              jobs: int = 1, seeds=None) -> int:
    try:
        base = load_config(config_path)
        set_threads(_threads(threads))
        axes = parse_grid(grid)
        cells = []
        for combo in itertools.product(*[[(k, v) for v in vals] for k, vals in axes]):
            cfg = base
            for k, v in combo:
                cfg = with_override(cfg, k, v)
            cells.append((_cell_name(combo), cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = out or base.out_dir
    seeds = list(seeds) if seeds else list(base.seeds)
    tasks = [(cfg, s, os.path.join(out, name, f"seed_{s}")) for name, cfg in cells for s in seeds]
    try:
        if jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_sweep_cell, tasks))
        else:
            results = [_sweep_cell(t) for t in tasks]
    except (LookaheadError, ArithmeticError, FloatingPointError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "sweep_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for (name, _), chunk in zip(cells, _chunks(results, len(seeds))):
            for r in chunk:
                m = compute_metrics(r)
                w.writerow([name, r.seed] + [_fmt(m[k]) for k in SWEEP_FIELDS[2:]])
    return EXIT_OK


def _chunks(seq, n):
    for i in range(0, len(seq), n):
        yield seq[i:i + n]


def cmd_validate(suite: str = "all") -> int:
    from .validate import run_suites

    ok = run_suites(suite)
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lookahes", description="Cost-aware nonmyopic Bayesian optimization.",
                                     epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="TOML config file")
        p.add_argument("--out", help="output directory (default: run.out_dir)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for independent restarts (default: $LOOKAHES_THREADS or 1)")

    p_run = sub.add_parser("run", help="run one experiment per seed", epilog=CONFIG_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_run)
    p_run.add_argument("--seed", type=int, default=None, help="seed (default: run.seeds)")

    p_sweep = sub.add_parser("sweep", help="Cartesian sweep over config overrides", epilog=CONFIG_HELP,
                             formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_sweep)
    p_sweep.add_argument("--grid", action="append", default=[], metavar="TABLE.KEY=V1,V2",
                         help="override axis; repeat for a product grid")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel sweep cells (processes)")
    p_sweep.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",")], default=None,
                         help="comma-separated seeds (default: run.seeds)")

    p_val = sub.add_parser("validate", help="numerical self-checks")
    p_val.add_argument("--suite", choices=["matheron", "gradients", "costs", "all"], default="all")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.out, args.threads)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.grid, args.out, args.threads, args.jobs, args.seeds)
    return cmd_validate(args.suite)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
