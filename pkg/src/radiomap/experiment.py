"""Experiment plans, per-method B2 reconstruction drivers and the sweep orchestrator."""

from __future__ import annotations

import configparser
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from radiomap.baselines import MaskedTensor, halrtc, idw3d_many, kriging_fit, kriging_predict
from radiomap.evaluation import area_report, rmse_area
from radiomap.graph import ENCODINGS, EncodingStrategy
from radiomap.propagation import (
    DepthParams,
    GeneratorParams,
    PropagationParams,
    RadiomapTensor,
    generate_ground_truth,
    transmitter_distance_m,
)
from radiomap.scenario import ScenarioError, UrbanScenario, block_free_cells, block_slices, load_scenario
from radiomap.synthetic import make_synthetic_scenario
from radiomap.trainer import (
    BlockSplit,
    GraphCache,
    TrainingConfig,
    observed_grid,
    predict,
    sample_mask,
    save_run,
    split_blocks,
    train,
)

log = logging.getLogger(__name__)

BASELINES = ("idw", "halrtc", "kriging")


def parse_method(method: str) -> tuple[str, str | None]:
    """``"radiogat"``, ``"radiogat:<encoding>"`` or a baseline name."""
    head, _, enc = method.partition(":")
    if head == "radiogat":
        if enc and enc not in ENCODINGS:
            raise ValueError(f"unknown encoding {enc!r} in method {method!r}")
        return head, enc or None
    if head in BASELINES and not enc:
        return head, None
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class BaselineParams:
    idw_power: float = 2.0
    # None: grid size over the scenario's frequency step
    idw_freq_scale: float | None = None
    idw_bands: tuple[float, ...] = (1750.0, 2750.0, 3750.0)
    halrtc_rho: float = 1e-6
    halrtc_iters: int = 1500
    kriging_max_lag: float = 150.0


@dataclass(frozen=True)
class ExperimentPlan:
    # "synthetic:<seed>" or a scenario config path
    scenarios: tuple[str, ...] = ("synthetic:0",)
    methods: tuple[str, ...] = ("radiogat", "kriging", "idw")
    f_obv: float = 1750.0
    f_targets: tuple[float, ...] = (5750.0,)
    sampling_rates: tuple[float, ...] = (0.05,)
    seeds: tuple[int, ...] = (0,)
    split_fraction: float = 0.5
    mask_fraction: float = 1.0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    propagation: PropagationParams = field(default_factory=PropagationParams)
    generator: GeneratorParams = field(default_factory=GeneratorParams)
    baselines: BaselineParams = field(default_factory=BaselineParams)
    workers: int = 1
    save_runs: bool = True

    def __post_init__(self):
        for name in ("scenarios", "methods", "f_targets", "sampling_rates", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"plan axis {name} is empty")
        for m in self.methods:
            parse_method(m)
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")

    def cells(self) -> list[tuple[str, str, float, float, int]]:
        """All (scenario, method, f_target, rate, seed) cells in report order."""
        return [(s, m, f, r, seed) for s in self.scenarios for m in self.methods for f in self.f_targets
                for r in self.sampling_rates for seed in self.seeds]


# -- scenario context ------------------------------------------------------------


@dataclass
class Context:
    """A scenario, its ground truth and a block split under one seed."""

    scenario: UrbanScenario
    truth: RadiomapTensor
    split: BlockSplit
    seed: int


def resolve_scenario(spec: str) -> UrbanScenario:
    """``synthetic:SEED[:SIZE_M[:BLOCK_M]]`` or a scenario config path."""
    if spec.startswith("synthetic"):
        parts = spec.split(":")[1:]
        try:
            seed = int(parts[0]) if parts and parts[0] else 0
            size = float(parts[1]) if len(parts) > 1 else 1000.0
            block = float(parts[2]) if len(parts) > 2 else 200.0
        except ValueError:
            raise ScenarioError(f"bad synthetic scenario spec {spec!r}") from None
        return make_synthetic_scenario(size, size, block_size_m=block, seed=seed)
    return load_scenario(spec)


@lru_cache(maxsize=8)
def _truth_for(spec: str, prop: PropagationParams, gen: GeneratorParams):
    s = resolve_scenario(spec)
    return s, generate_ground_truth(s, prop, gen)


def make_context(plan: ExperimentPlan, spec: str, seed: int) -> Context:
    s, truth = _truth_for(spec, plan.propagation, plan.generator)
    return Context(s, truth, split_blocks(s, plan.split_fraction, seed), seed)


def _empty_grid(s: UrbanScenario) -> np.ndarray:
    return np.full((s.rows, s.cols), np.nan)


# -- method drivers: each returns a (rows, cols) dBm grid filled over B2 ------------


def predict_radiogat(ctx: Context, cfg: TrainingConfig, run_dir: Path | None = None) -> np.ndarray:
    s, truth, split = ctx.scenario, ctx.truth, ctx.split
    cache = GraphCache(s, cfg.strategy)
    trained = train(s, truth, split, cfg, cache=cache)
    mask = sample_mask(s, cfg.sampling_rate, cfg.f_obv, cfg.seed, split.b2)
    obs = observed_grid(truth, cfg.f_obv, mask)
    out = _empty_grid(s)
    for b in split.b2:
        c = cache.cells(b)
        if len(c):
            out[c[:, 0], c[:, 1]] = predict(trained, s, obs, b, cfg.f_target, cache)
    if run_dir is not None:
        trained.masks[f"b2_obs_{cfg.f_obv:g}"] = mask
        save_run(trained, run_dir)
    return out


def _freq_scale(s: UrbanScenario, bp: BaselineParams) -> float:
    if bp.idw_freq_scale is not None:
        return bp.idw_freq_scale
    f = np.asarray(s.frequencies_mhz)
    step = float(np.diff(f).min()) if len(f) > 1 else 1.0
    return s.grid_size_m / step


def predict_idw(ctx: Context, f_target: float, rate: float, bp: BaselineParams) -> np.ndarray:
    """Per B2 block: sparse samples at the IDW bands, interpolated in (x, y, scaled f)."""
    s, truth = ctx.scenario, ctx.truth
    bands = [f for f in bp.idw_bands if f in s.frequencies_mhz]
    masks = {f: sample_mask(s, rate, f, ctx.seed, ctx.split.b2) for f in bands}
    scale = _freq_scale(s, bp)
    out = _empty_grid(s)
    for b in ctx.split.b2:
        c = block_free_cells(s, b)
        if not len(c):
            continue
        x, y = s.position_m(c[:, 0], c[:, 1])
        pts, vals = [], []
        for f in bands:
            sel = masks[f][c[:, 0], c[:, 1]]
            pts.append(np.column_stack([x[sel], y[sel], np.full(sel.sum(), f)]))
            vals.append(truth.grid(f)[c[sel, 0], c[sel, 1]])
        q = np.column_stack([x, y, np.full(len(c), f_target)])
        out[c[:, 0], c[:, 1]] = idw3d_many(np.vstack(pts), np.concatenate(vals), q, bp.idw_power, scale)
    return out


def predict_halrtc(ctx: Context, f_target: float, rate: float, bp: BaselineParams) -> np.ndarray:
    """Per B2 block: complete a (rows, cols, bands + target) tensor of sparse samples."""
    s, truth = ctx.scenario, ctx.truth
    bands = [f for f in bp.idw_bands if f in s.frequencies_mhz and f != f_target] + [f_target]
    masks = [sample_mask(s, rate, f, ctx.seed, ctx.split.b2) for f in bands]
    out = _empty_grid(s)
    for b in ctx.split.b2:
        c = block_free_cells(s, b)
        if not len(c):
            continue
        rs, cs = block_slices(s, b)
        vals = np.stack([truth.grid(f)[rs, cs] for f in bands], axis=2)
        obs = np.stack([m[rs, cs] for m in masks], axis=2) & np.isfinite(vals)
        if not obs.any():
            continue
        # center each band on its observed mean; otherwise missing entries shrink toward 0 dBm
        counts = obs.sum(axis=(0, 1))
        means = np.where(counts > 0, np.where(obs, vals, 0.0).sum(axis=(0, 1)) / np.maximum(counts, 1), np.nan)
        means = np.where(np.isnan(means), np.nanmean(means), means)
        centered = np.where(obs, vals - means, 0.0)
        res = halrtc(MaskedTensor(centered, obs), rho=bp.halrtc_rho, iters=bp.halrtc_iters, track_objective=False)
        block_pred = res.tensor[:, :, -1] + means[-1]
        out[c[:, 0], c[:, 1]] = block_pred[c[:, 0] - rs.start, c[:, 1] - cs.start]
    return out


def predict_kriging(ctx: Context, f_obv: float, f_target: float, rate: float, bp: BaselineParams) -> np.ndarray:
    """Trend and variogram from complete B1 maps; residual kriging from sparse f_obv samples in B2."""
    s, truth, split = ctx.scenario, ctx.truth, ctx.split
    dist = transmitter_distance_m(s).min(axis=0)
    b1 = np.vstack([block_free_cells(s, b) for b in split.b1])
    d1 = dist[b1[:, 0], b1[:, 1]]
    xy1 = np.column_stack(s.position_m(b1[:, 0], b1[:, 1]))
    rss = np.concatenate([truth.grid(f_obv)[b1[:, 0], b1[:, 1]], truth.grid(f_target)[b1[:, 0], b1[:, 1]]])
    freqs = np.repeat([f_obv, f_target], len(b1))
    model = kriging_fit(np.tile(d1, 2), freqs, rss, np.vstack([xy1, xy1]), seed=ctx.seed,
                        max_lag=bp.kriging_max_lag)
    mask = sample_mask(s, rate, f_obv, ctx.seed, split.b2)
    g_obv = truth.grid(f_obv)
    out = _empty_grid(s)
    for b in split.b2:
        c = block_free_cells(s, b)
        if not len(c):
            continue
        sel = mask[c[:, 0], c[:, 1]]
        xy = np.column_stack(s.position_m(c[:, 0], c[:, 1]))
        d = dist[c[:, 0], c[:, 1]]
        resid = g_obv[c[sel, 0], c[sel, 1]] - model.trend(d[sel], f_obv)
        out[c[:, 0], c[:, 1]] = kriging_predict(model, xy[sel], resid, xy, d, f_target)
    return out


def cell_config(plan: ExperimentPlan, method: str, f_target: float, rate: float, seed: int) -> TrainingConfig:
    _, enc = parse_method(method)
    strategy = plan.training.strategy if enc is None else replace(plan.training.strategy, kind=enc)
    return replace(plan.training, f_obv=plan.f_obv, f_target=f_target, f_targets=(), sampling_rate=rate,
                   mask_fraction=plan.mask_fraction, seed=seed, strategy=strategy)


def run_method(plan: ExperimentPlan, ctx: Context, method: str, f_target: float, rate: float,
               run_dir: Path | None = None) -> np.ndarray:
    head, _ = parse_method(method)
    if head == "radiogat":
        return predict_radiogat(ctx, cell_config(plan, method, f_target, rate, ctx.seed), run_dir)
    if head == "idw":
        return predict_idw(ctx, f_target, rate, plan.baselines)
    if head == "halrtc":
        return predict_halrtc(ctx, f_target, rate, plan.baselines)
    return predict_kriging(ctx, plan.f_obv, f_target, rate, plan.baselines)


# -- orchestration -----------------------------------------------------------------------


@dataclass
class CellResult:
    scenario: str
    method: str
    f_target: float
    rate: float
    seed: int
    rmse_db: float
    status: str = "ok"
    block_rmse: list = field(default_factory=list)


def _cell_id(scenario: str, method: str, f: float, rate: float, seed: int) -> str:
    tag = Path(scenario).stem if not scenario.startswith("synthetic") else scenario.replace(":", "-")
    return f"{tag}_{method.replace(':', '-')}_f{f:g}_r{rate:g}_s{seed}"


def run_cell(plan: ExperimentPlan, cell, out_dir: Path | None = None) -> CellResult:
    spec, method, f, rate, seed = cell
    try:
        ctx = make_context(plan, spec, seed)
        run_dir = None
        if out_dir is not None and plan.save_runs and method.startswith("radiogat"):
            run_dir = out_dir / "runs" / _cell_id(*cell)
        grid = run_method(plan, ctx, method, f, rate, run_dir)
        pred = RadiomapTensor(grid.reshape(-1, 1), ctx.scenario.rows, ctx.scenario.cols, (f,))
        rep = area_report(ctx.scenario, ctx.truth, pred, ctx.split.b2, (f,), method, rate)
        blocks = [(b.block.block_row, b.block.block_col, b.rmse_db, b.node_count) for b in rep.blocks]
        return CellResult(spec, method, f, rate, seed, rep.area_rmse_db, "ok", blocks)
    except Exception as exc:  # one failed cell must not end the sweep
        log.warning("cell %s failed: %s", _cell_id(*cell), exc)
        return CellResult(spec, method, f, rate, seed, math.nan, f"error: {type(exc).__name__}: {exc}")


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.6f}"


def write_reports(plan: ExperimentPlan, results: list[CellResult], out_dir: Path) -> dict[str, Path]:
    """``report.csv`` (one row per cell), ``summary.csv`` (mean over seeds) and
    ``minmax.csv`` (mean/min/max over scenarios)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    order = {c: i for i, c in enumerate(plan.cells())}
    results = sorted(results, key=lambda r: order[(r.scenario, r.method, r.f_target, r.rate, r.seed)])
    paths = {k: out_dir / f"{k}.csv" for k in ("report", "summary", "minmax")}
    with open(paths["report"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "method", "f_target_mhz", "sampling_rate", "seed", "rmse_db", "status"])
        for r in results:
            w.writerow([r.scenario, r.method, f"{r.f_target:g}", f"{r.rate:g}", r.seed, _fmt(r.rmse_db), r.status])

    summary = {}
    for r in results:
        summary.setdefault((r.scenario, r.method, r.f_target, r.rate), []).append(r.rmse_db)
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "method", "f_target_mhz", "sampling_rate", "mean_rmse_db", "n_ok"])
        for (sc, m, f, rate), vals in summary.items():
            ok = [v for v in vals if np.isfinite(v)]
            w.writerow([sc, m, f"{f:g}", f"{rate:g}", _fmt(float(np.mean(ok)) if ok else math.nan), len(ok)])

    across = {}
    for (sc, m, f, rate), vals in summary.items():
        ok = [v for v in vals if np.isfinite(v)]
        if ok:
            across.setdefault((m, f, rate), []).append(float(np.mean(ok)))
    with open(paths["minmax"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "f_target_mhz", "sampling_rate", "mean_rmse_db", "min_rmse_db", "max_rmse_db",
                    "n_scenarios"])
        for m in plan.methods:
            for f in plan.f_targets:
                for rate in plan.sampling_rates:
                    vals = across.get((m, f, rate), [])
                    if vals:
                        w.writerow([m, f"{f:g}", f"{rate:g}", _fmt(float(np.mean(vals))), _fmt(min(vals)),
                                    _fmt(max(vals)), len(vals)])
                    else:
                        w.writerow([m, f"{f:g}", f"{rate:g}", "nan", "nan", "nan", 0])

    blocks_dir = out_dir / "cells"
    blocks_dir.mkdir(exist_ok=True)
    for r in results:
        rec = {"scenario": r.scenario, "method": r.method, "f_target_mhz": r.f_target, "sampling_rate": r.rate,
               "seed": r.seed, "rmse_db": None if not np.isfinite(r.rmse_db) else r.rmse_db, "status": r.status,
               "blocks": [{"block_row": br, "block_col": bc, "rmse_db": v, "node_count": n}
                          for br, bc, v, n in r.block_rmse]}
        path = blocks_dir / f"{_cell_id(r.scenario, r.method, r.f_target, r.rate, r.seed)}.json"
        path.write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    return paths


def run_experiment(plan: ExperimentPlan, out_dir=None, progress=None) -> list[CellResult]:
    """Run every plan cell (sequentially unless ``plan.workers > 1``) and write reports."""
    out = Path(out_dir) if out_dir is not None else None
    cells = plan.cells()
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(run_cell, [plan] * len(cells), cells, [out] * len(cells)))
    else:
        results = []
        for cell in cells:
            results.append(run_cell(plan, cell, out))
            if progress is not None:
                progress(results[-1])
    if out is not None:
        write_reports(plan, results, out)
        (out / "plan.json").write_text(json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n")
    return results


def mean_rmse(results: list[CellResult], method: str) -> float:
    """Root-mean-square aggregation is for blocks; across seeds and areas the plain mean is used."""
    vals = [r.rmse_db for r in results if r.method == method and np.isfinite(r.rmse_db)]
    if not vals:
        raise ValueError(f"no successful cells for {method}")
    return float(np.mean(vals))


def mean_table(results: list[CellResult]) -> str:
    """Plain-text table of mean RMSE (dB) over seeds and scenarios: methods by sampling rate."""
    methods = list(dict.fromkeys(r.method for r in results))
    rates = sorted({r.rate for r in results})
    width = max(len(m) for m in methods) + 2
    lines = ["method".ljust(width) + "".join(f"{100 * r:>9g}%" for r in rates)]
    for m in methods:
        cells = []
        for rate in rates:
            vals = [r.rmse_db for r in results if r.method == m and r.rate == rate and np.isfinite(r.rmse_db)]
            cells.append(f"{np.mean(vals):>10.3f}" if vals else f"{'nan':>10}")
        lines.append(m.ljust(width) + "".join(cells))
    return "\n".join(lines)


# -- config files -------------------------------------------------------------------------------


def plan_to_dict(plan: ExperimentPlan) -> dict:
    d = asdict(plan)
    d["training"] = plan.training.to_dict()
    return d


def _tuple(text: str, conv=float) -> tuple:
    return tuple(conv(v) for v in text.replace(",", " ").split())


def _section(cp, name) -> dict:
    return dict(cp[name]) if cp.has_section(name) else {}


def _typed(cls, raw: dict, where: str):
    """Build dataclass ``cls`` from string values, converting by the field defaults' types."""
    fields = {f.name: f for f in cls.__dataclass_fields__.values()}
    kw = {}
    for key, text in raw.items():
        if key not in fields:
            raise ScenarioError(f"[{where}] unknown key {key!r}")
        default = getattr(cls(), key) if key != "strategy" else None
        try:
            if isinstance(default, bool):
                kw[key] = text.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[key] = int(text)
            elif isinstance(default, tuple):
                kw[key] = _tuple(text)
            elif default is None and key in ("delta", "idw_freq_scale"):
                kw[key] = None if text.strip().lower() in ("", "none", "auto") else float(text)
            else:
                kw[key] = float(text)
        except ValueError:
            raise ScenarioError(f"[{where}] {key}: cannot parse {text!r}") from None
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ScenarioError(f"[{where}] {exc}") from None


def training_from_config(cp: configparser.ConfigParser) -> TrainingConfig:
    raw = _section(cp, "training")
    strat_keys = {"encoding": "kind", "neighborhood": "neighborhood", "collinear_tol": "collinear_tol",
                  "range_limit": "range_limit", "literal_environment": "literal_environment"}
    depth_keys = {"beta", "c0", "c", "alpha", "d_th", "delta"}
    strat, depth, rest = {}, {}, {}
    for k, v in raw.items():
        if k in strat_keys:
            strat[strat_keys[k]] = v
        elif k in depth_keys:
            depth[k] = v
        else:
            rest[k] = v
    depth_params = _typed(DepthParams, depth, "training")
    try:
        s = EncodingStrategy(
            kind=strat.get("kind", "model"),
            neighborhood=int(strat.get("neighborhood", 4)),
            collinear_tol=float(strat.get("collinear_tol", 0.5)),
            depth=depth_params,
            range_limit=strat.get("range_limit", "true").strip().lower() in ("1", "true", "yes", "on"),
            literal_environment=strat.get("literal_environment", "false").strip().lower() in ("1", "true", "yes", "on"),
        )
    except ValueError as exc:
        raise ScenarioError(f"[training] {exc}") from None
    base = _typed(TrainingConfig, rest, "training")
    return replace(base, strategy=s)


def plan_from_config(cp: configparser.ConfigParser, config_path: Path | None = None, seed: int | None = None
                     ) -> ExperimentPlan:
    """Build a plan from ``[experiment]``, ``[training]``, ``[propagation]``, ``[generator]``
    and ``[baselines]`` sections. A config that itself describes an area (``[area]``)
    is its own scenario unless ``scenarios`` is given."""
    exp = _section(cp, "experiment")
    kw = {}
    if "scenarios" in exp:
        base = config_path.parent if config_path else Path(".")
        specs = []
        for item in exp["scenarios"].replace(",", " ").split():
            specs.append(item if item.startswith("synthetic") or Path(item).is_absolute() else str(base / item))
        kw["scenarios"] = tuple(specs)
    elif cp.has_section("area") and config_path is not None:
        kw["scenarios"] = (str(config_path),)
    try:
        if "methods" in exp:
            kw["methods"] = tuple(exp["methods"].replace(",", " ").split())
        if "f_obv" in exp:
            kw["f_obv"] = float(exp["f_obv"])
        if "f_targets" in exp:
            kw["f_targets"] = _tuple(exp["f_targets"])
        if "sampling_rates" in exp:
            kw["sampling_rates"] = _tuple(exp["sampling_rates"])
        if "seeds" in exp:
            kw["seeds"] = _tuple(exp["seeds"], int)
        for key in ("split_fraction", "mask_fraction"):
            if key in exp:
                kw[key] = float(exp[key])
        if "workers" in exp:
            kw["workers"] = int(exp["workers"])
        if "save_runs" in exp:
            kw["save_runs"] = exp["save_runs"].strip().lower() in ("1", "true", "yes", "on")
    except ValueError as exc:
        raise ScenarioError(f"[experiment] {exc}") from None
    unknown = set(exp) - {"scenarios", "methods", "f_obv", "f_targets", "sampling_rates", "seeds", "split_fraction",
                          "mask_fraction", "workers", "save_runs"}
    if unknown:
        raise ScenarioError(f"[experiment] unknown keys: {', '.join(sorted(unknown))}")
    if seed is not None:
        kw["seeds"] = (seed,)
    try:
        return ExperimentPlan(
            training=training_from_config(cp),
            propagation=_typed(PropagationParams, _section(cp, "propagation"), "propagation"),
            generator=_typed(GeneratorParams, _section(cp, "generator"), "generator"),
            baselines=_typed(BaselineParams, _section(cp, "baselines"), "baselines"),
            **kw,
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"[experiment] {exc}") from None


__all__ = [
    "BASELINES", "BaselineParams", "CellResult", "Context", "ExperimentPlan", "cell_config", "make_context",
    "mean_rmse", "mean_table", "parse_method", "plan_from_config", "plan_to_dict", "predict_halrtc", "predict_idw",
    "predict_kriging", "predict_radiogat", "resolve_scenario", "rmse_area", "run_cell", "run_experiment",
    "run_method", "training_from_config", "write_reports",
]
