"""Command-line entry point: ``radiomap <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 data or invariant error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from radiomap.evaluation import area_report, histogram, render_radiomap
from radiomap.experiment import (
    ExperimentPlan,
    make_context,
    plan_from_config,
    run_experiment,
    run_method,
)
from radiomap.graph import ENCODINGS, build_graph, graph_stats, write_graph
from radiomap.propagation import RadiomapTensor, load_radiomap, save_radiomap
from radiomap.scenario import BlockIndex, ScenarioError, read_config, save_scenario
from radiomap.trainer import (
    GraphCache,
    load_run,
    observed_grid,
    predict,
    sample_mask,
    save_run,
    train,
)

log = logging.getLogger("radiomap")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- shared plumbing ------------------------------------------------------------------


def _config(args) -> configparser.ConfigParser:
    if args.config is None:
        return configparser.ConfigParser()
    if not Path(args.config).exists():
        raise ScenarioError(f"config file {args.config} not found")
    return read_config(args.config)


def _plan(args) -> ExperimentPlan:
    cp = _config(args)
    path = Path(args.config) if args.config else None
    plan = plan_from_config(cp, path)
    if getattr(args, "scenario", None):
        plan = replace(plan, scenarios=(args.scenario,))
    if args.seed is not None:
        plan = replace(plan, seeds=(args.seed,))
    return plan


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _context(args):
    plan = _plan(args)
    ctx = make_context(plan, plan.scenarios[0], _seed(args))
    if getattr(args, "truth", None):
        ctx.truth = load_radiomap(args.truth, ctx.scenario.rows, ctx.scenario.cols)
    return plan, ctx


def _training(plan: ExperimentPlan, args):
    cfg = replace(plan.training, seed=_seed(args))
    over = {}
    for key in ("epochs", "lr", "hidden", "mask_fraction", "f_obv", "f_target"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    if getattr(args, "rate", None) is not None:
        over["sampling_rate"] = args.rate
    strategy = cfg.strategy
    if getattr(args, "encoding", None):
        strategy = replace(strategy, kind=args.encoding)
    if getattr(args, "no_range_limit", False):
        strategy = replace(strategy, range_limit=False)
    return replace(cfg, strategy=strategy, **over)


def _grid_tensor(grid: np.ndarray, f: float) -> RadiomapTensor:
    rows, cols = grid.shape
    return RadiomapTensor(grid.reshape(-1, 1), rows, cols, (float(f),))


# -- subcommands --------------------------------------------------------------------------


def cmd_generate(args) -> int:
    plan = _plan(args)
    ctx = make_context(plan, plan.scenarios[0], _seed(args))
    out = _out(args, "generated")
    save_scenario(ctx.scenario, out / "scenario.ini")
    path = out / f"truth.{args.format}"
    save_radiomap(ctx.truth, path)
    print(f"wrote {path} ({ctx.scenario.rows}x{ctx.scenario.cols} grids, {len(ctx.truth.frequencies_mhz)} bands)")
    return EXIT_OK


def cmd_graph(args) -> int:
    plan, ctx = _context(args)
    s = ctx.scenario
    b = BlockIndex(*args.block)
    if b not in s.blocks():
        raise ScenarioError(f"block {args.block} is outside the scenario")
    cfg = _training(plan, args)
    mask = sample_mask(s, cfg.sampling_rate, args.freq, _seed(args), [b])
    graph = build_graph(s, ctx.truth, b, args.freq, mask, cfg.strategy)
    st = graph_stats(graph)
    out = _out(args, "graph")
    write_graph(graph, out / "edges.csv", out / "nodes.csv")
    print(json.dumps(st._asdict(), sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    plan, ctx = _context(args)
    cfg = _training(plan, args)

    def progress(epoch, loss):
        if args.verbose:
            print(f"epoch {epoch} loss {loss:.6g}")

    trained = train(ctx.scenario, ctx.truth, ctx.split, cfg, progress=progress)
    out = save_run(trained, _out(args, "run"), extra={"scenario": plan.scenarios[0]})
    final = trained.loss_trace[-1] if trained.loss_trace else float("nan")
    print(f"trained {cfg.epochs} epochs, final loss {final:.6g}; run saved to {out}")
    return EXIT_OK


def _write_prediction(ctx, grid, f, out: Path, method: str, rate: float) -> None:
    pred = _grid_tensor(grid, f)
    save_radiomap(pred, out / "prediction.csv")
    rep = area_report(ctx.scenario, ctx.truth, pred, ctx.split.b2, (f,), method, rate)
    print(f"{method}: area RMSE {rep.area_rmse_db:.4f} dB over {len(rep.blocks)} B2 blocks")


def cmd_predict(args) -> int:
    plan, ctx = _context(args)
    trained = load_run(args.run)
    cfg = trained.config
    f = args.f_target if args.f_target is not None else cfg.f_target
    s = ctx.scenario
    mask = sample_mask(s, cfg.sampling_rate, cfg.f_obv, cfg.seed, ctx.split.b2)
    obs = observed_grid(ctx.truth, cfg.f_obv, mask)
    cache = GraphCache(s, cfg.strategy)
    grid = np.full((s.rows, s.cols), np.nan)
    for b in ctx.split.b2:
        c = cache.cells(b)
        if len(c):
            grid[c[:, 0], c[:, 1]] = predict(trained, s, obs, b, f, cache)
    _write_prediction(ctx, grid, f, _out(args, "prediction"), "radiogat", cfg.sampling_rate)
    return EXIT_OK


def cmd_baseline(args) -> int:
    plan, ctx = _context(args)
    bp = plan.baselines
    if args.iters is not None:
        bp = replace(bp, halrtc_iters=args.iters)
    plan = replace(plan, baselines=bp)
    f = args.f_target if args.f_target is not None else plan.f_targets[0]
    rate = args.rate if args.rate is not None else plan.sampling_rates[0]
    grid = run_method(plan, ctx, args.method, f, rate)
    _write_prediction(ctx, grid, f, _out(args, f"baseline_{args.method}"), args.method, rate)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    plan, ctx = _context(args)
    s = ctx.scenario
    pred = load_radiomap(args.pred, s.rows, s.cols)
    fs = tuple(args.freq) if args.freq else pred.frequencies_mhz
    rep = area_report(s, ctx.truth, pred, ctx.split.b2, fs, args.label, float("nan"))
    out = _out(args, "evaluation")
    with open(out / "blocks.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block_row", "block_col", "rmse_db", "node_count"])
        for b in rep.blocks:
            w.writerow([b.block.block_row, b.block.block_col, f"{b.rmse_db:.6f}", b.node_count])
    for f, v in rep.per_frequency.items():
        print(f"{f:g} MHz: {v:.4f} dB")
    print(f"area RMSE {rep.area_rmse_db:.4f} dB")
    return EXIT_OK


def cmd_sweep(args) -> int:
    plan = _plan(args)
    if args.workers is not None:
        plan = replace(plan, workers=args.workers)
    out = _out(args, "sweep")

    def progress(r):
        print(f"{r.scenario} {r.method} f={r.f_target:g} rate={r.rate:g} seed={r.seed}: "
              f"{r.rmse_db:.4f} dB [{r.status}]")

    results = run_experiment(plan, out, progress=progress)
    failed = sum(r.status != "ok" for r in results)
    print(f"{len(results)} cells, {failed} failed; reports in {out}")
    return EXIT_OK


def _load_for_view(args) -> RadiomapTensor:
    return load_radiomap(args.radiomap)


def cmd_render(args) -> int:
    t = _load_for_view(args)
    f = args.freq if args.freq is not None else t.frequencies_mhz[0]
    out = _out(args, "render")
    path = render_radiomap(t, out / f"radiomap_{f:g}.ppm", f, args.lo, args.hi, args.palette)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_histogram(args) -> int:
    t = _load_for_view(args)
    f = args.freq if args.freq is not None else t.frequencies_mhz[0]
    edges, counts = histogram(t.grid(f), args.bin_width, args.origin)
    out = _out(args, "histogram")
    path = out / f"histogram_{f:g}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lo_db", "hi_db", "count"])
        for lo, hi, n in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.6f}", f"{hi:.6f}", int(n)])
    print(f"wrote {path} ({int(counts.sum())} values in {len(counts)} bins)")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------------


def _global_flags(p, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="run seed (split, sampling, init)")
    p.add_argument("--config", default=d, help="key-value config file")
    p.add_argument("--out", default=d, help="output directory")


def _scenario_flags(p) -> None:
    p.add_argument("--scenario", help="synthetic:SEED[:SIZE_M[:BLOCK_M]] or a scenario file")
    p.add_argument("--truth", help="ground-truth radiomap file; generated when omitted")


def _training_flags(p) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--rate", type=float, help="sampling rate of f_obv observations")
    p.add_argument("--mask-fraction", dest="mask_fraction", type=float, help="labelled share of B1 grids")
    p.add_argument("--f-obv", dest="f_obv", type=float)
    p.add_argument("--f-target", dest="f_target", type=float)
    p.add_argument("--encoding", choices=ENCODINGS)
    p.add_argument("--no-range-limit", action="store_true",
                   help="environment/transmitter encoders without the d_th cutoff")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radiomap", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "scenario to ground-truth radiomap")
    p.add_argument("--scenario")
    p.add_argument("--format", choices=("csv", "bin"), default="csv")

    p = add("graph", cmd_graph, "build and export one block graph")
    _scenario_flags(p)
    _training_flags(p)
    p.add_argument("--block", type=int, nargs=2, metavar=("ROW", "COL"), default=(0, 0))
    p.add_argument("--freq", type=float, default=1750.0, help="observed frequency of the node features")

    p = add("train", cmd_train, "train a RadioGAT model on B1")
    _scenario_flags(p)
    _training_flags(p)

    p = add("predict", cmd_predict, "predict B2 from a trained run directory")
    _scenario_flags(p)
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--f-target", dest="f_target", type=float)

    p = add("baseline", cmd_baseline, "run a classical baseline over B2")
    p.add_argument("method", choices=("idw", "halrtc", "kriging"))
    _scenario_flags(p)
    p.add_argument("--rate", type=float)
    p.add_argument("--f-target", dest="f_target", type=float)
    p.add_argument("--iters", type=int, help="HaLRTC iterations")

    p = add("evaluate", cmd_evaluate, "block and area RMSE of a prediction over B2")
    _scenario_flags(p)
    p.add_argument("--pred", required=True, help="predicted radiomap file")
    p.add_argument("--freq", type=float, nargs="+")
    p.add_argument("--label", default="prediction")

    p = add("sweep", cmd_sweep, "run an experiment plan and write report CSVs")
    p.add_argument("--scenario")
    p.add_argument("--workers", type=int)

    p = add("render", cmd_render, "write a radiomap band as a PPM image")
    p.add_argument("radiomap")
    p.add_argument("--freq", type=float)
    p.add_argument("--lo", type=float, help="dB mapped to the first palette color")
    p.add_argument("--hi", type=float, help="dB mapped to the last palette color")
    p.add_argument("--palette", choices=("heat", "gray"), default="heat")

    p = add("histogram", cmd_histogram, "bin a radiomap band's values")
    p.add_argument("radiomap")
    p.add_argument("--freq", type=float)
    p.add_argument("--bin-width", dest="bin_width", type=float, default=1.0)
    p.add_argument("--origin", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("radiomap: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"radiomap {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
