"""Feature assembly, masked training over the measured blocks, and cross-band inference."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from radiomap.graph import EncodingStrategy, encode_pairs, pairs_to_adjacency
from radiomap.nn import autodiff as ad
from radiomap.nn.adam import AdamState, adam_step
from radiomap.nn.checkpoint import save_checkpoint
from radiomap.nn.gat import AttentionGraph, GatModel
from radiomap.propagation import DepthParams, RadiomapTensor, radio_depth_map
from radiomap.scenario import BlockIndex, UrbanScenario, block_free_cells

N_FEATURES = 5


# -- splits and sampling ------------------------------------------------------


@dataclass(frozen=True)
class BlockSplit:
    b1: tuple[BlockIndex, ...]
    b2: tuple[BlockIndex, ...]

    def __post_init__(self):
        if set(self.b1) & set(self.b2):
            raise ValueError("B1 and B2 overlap")


def split_blocks(scenario: UrbanScenario, fraction: float = 0.5, seed: int = 0) -> BlockSplit:
    """Random B1/B2 partition of the blocks that contain at least one free grid."""
    usable = [b for b in scenario.blocks() if len(block_free_cells(scenario, b))]
    rng = np.random.default_rng([seed, 0x5B11])
    order = rng.permutation(len(usable))
    n1 = int(round(fraction * len(usable)))
    b1 = tuple(sorted(usable[i] for i in order[:n1]))
    b2 = tuple(sorted(usable[i] for i in order[n1:]))
    return BlockSplit(b1, b2)


def count_for_rate(rate: float, n: int) -> int:
    return min(n, math.ceil(rate * n - 1e-9))


def sampling_order(scenario: UrbanScenario, b: BlockIndex, tag: int, seed: int) -> np.ndarray:
    """Seeded permutation of block ``b``'s free cells; prefixes are the nested samples."""
    cells = block_free_cells(scenario, b)
    rng = np.random.default_rng([seed, tag, b.block_row, b.block_col])
    return cells[rng.permutation(len(cells))]


def sample_mask(scenario: UrbanScenario, rate: float, f_mhz: float, seed: int,
                blocks=None) -> np.ndarray:
    """Observation mask at ``f_mhz``: ``ceil(rate * n)`` random free grids per block.

    Masks for lower rates are subsets of masks for higher rates under one seed.
    """
    k = scenario.frequency_index(f_mhz)
    mask = np.zeros((scenario.rows, scenario.cols), dtype=bool)
    for b in blocks if blocks is not None else scenario.blocks():
        order = sampling_order(scenario, b, 1000 + k, seed)
        pick = order[:count_for_rate(rate, len(order))]
        mask[pick[:, 0], pick[:, 1]] = True
    return mask


def label_mask(scenario: UrbanScenario, fraction: float, f_mhz: float, seed: int, blocks) -> np.ndarray:
    """Grids whose ``f_mhz`` ground truth enters the loss (all of them when ``fraction == 1``)."""
    k = scenario.frequency_index(f_mhz)
    mask = np.zeros((scenario.rows, scenario.cols), dtype=bool)
    for b in blocks:
        order = sampling_order(scenario, b, 2000 + k, seed)
        pick = order[:count_for_rate(fraction, len(order))]
        mask[pick[:, 0], pick[:, 1]] = True
    return mask


# -- normalization -------------------------------------------------------------


@dataclass(frozen=True)
class NormBounds:
    rss_lo: float
    rss_hi: float
    target_lo: float
    target_hi: float
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self):
        for name in ("rss", "target", "x", "y", "f"):
            lo, hi = getattr(self, name + "_lo"), getattr(self, name + "_hi")
            if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
                raise ValueError(f"degenerate {name} bounds [{lo}, {hi}]")

    def norm_rss(self, v):
        return np.clip((np.asarray(v) - self.rss_lo) / (self.rss_hi - self.rss_lo), 0.0, 1.0)

    def norm_target(self, v):
        return (np.asarray(v) - self.target_lo) / (self.target_hi - self.target_lo)

    def denorm_target(self, v):
        return np.asarray(v) * (self.target_hi - self.target_lo) + self.target_lo

    def norm_freq(self, f):
        return (np.asarray(f, dtype=float) - self.f_lo) / (self.f_hi - self.f_lo)


def compute_bounds(scenario: UrbanScenario, obs_values: np.ndarray, target_values: np.ndarray,
                   pad: float = 0.1) -> NormBounds:
    """Min-max bounds; RSS bounds come only from the given (B1) samples.

    The observed-RSS range is widened by ``pad`` on both sides so that any
    observation maps strictly above the 0 used for unobserved nodes.
    """
    obs = np.asarray(obs_values, dtype=float)
    tgt = np.asarray(target_values, dtype=float)
    if obs.size == 0 or tgt.size == 0:
        raise ValueError("bounds need at least one observation and one label")
    lo, hi = float(obs.min()), float(obs.max())
    span = max(hi - lo, 1e-6)
    g = scenario.grid_size_m
    return NormBounds(
        rss_lo=lo - pad * span, rss_hi=hi + pad * span,
        target_lo=float(tgt.min()), target_hi=float(max(tgt.max(), tgt.min() + 1e-6)),
        x_lo=0.5 * g, x_hi=scenario.width_m - 0.5 * g,
        y_lo=0.5 * g, y_hi=scenario.height_m - 0.5 * g,
        f_lo=min(scenario.frequencies_mhz), f_hi=max(scenario.frequencies_mhz),
    )


def assemble_features(scenario: UrbanScenario, cells: np.ndarray, observed: np.ndarray,
                      f_obv: float, f_target: float, bounds: NormBounds) -> np.ndarray:
    """Per-node ``[rss, x, y, f_obv, f_target]`` in [0, 1]; ``observed`` is NaN where unobserved."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    obs = np.asarray(observed, dtype=float)
    x, y = scenario.position_m(cells[:, 0], cells[:, 1])
    X = np.empty((len(cells), N_FEATURES))
    have = np.isfinite(obs)
    X[:, 0] = np.where(have, bounds.norm_rss(np.where(have, obs, bounds.rss_lo)), 0.0)
    X[:, 1] = np.clip((x - bounds.x_lo) / (bounds.x_hi - bounds.x_lo), 0.0, 1.0)
    X[:, 2] = np.clip((y - bounds.y_lo) / (bounds.y_hi - bounds.y_lo), 0.0, 1.0)
    X[:, 3] = np.clip(bounds.norm_freq(f_obv), 0.0, 1.0)
    X[:, 4] = np.clip(bounds.norm_freq(f_target), 0.0, 1.0)
    return X


# -- loss ----------------------------------------------------------------------


def masked_loss(pred, truth, mask):
    """Sum of squared errors at masked nodes divided by the TOTAL node count."""
    pred_t = ad.as_tensor(pred)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    z = np.asarray(mask, dtype=float).reshape(-1)
    n = truth.size
    if pred_t.data.size != n or z.size != n:
        raise ValueError("pred, truth and mask must have equal lengths")
    if n == 0:
        return ad.Tensor(0.0)
    p = ad.reshape(pred_t, (n,))
    return ad.total(ad.mul(ad.square(ad.sub(p, truth)), z)) / n


# -- training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    epochs: int = 200
    f_obv: float = 1750.0
    f_target: float = 5750.0
    # extra targets cycled step by step ("alternating" multi-band training)
    f_targets: tuple[float, ...] = ()
    sampling_rate: float = 0.05
    mask_fraction: float = 1.0
    seed: int = 0
    strategy: EncodingStrategy = field(default_factory=EncodingStrategy)
    hidden: int = 32
    rss_pad: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 < self.mask_fraction <= 1:
            raise ValueError("mask_fraction must be in (0, 1]")
        if not 0 < self.sampling_rate <= 1:
            raise ValueError("sampling_rate must be in (0, 1]")

    @property
    def targets(self) -> tuple[float, ...]:
        return self.f_targets or (self.f_target,)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"]["depth"] = asdict(self.strategy.depth)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        s = dict(d.pop("strategy", {}))
        depth = DepthParams(**s.pop("depth", {}))
        d["f_targets"] = tuple(d.get("f_targets", ()))
        return cls(strategy=EncodingStrategy(depth=depth, **s), **d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class BlockGraphs:
    """Everything the network needs for one block at one (f_obv, f_target) pair."""

    block: BlockIndex
    cells: np.ndarray
    features: np.ndarray
    graph_obv: AttentionGraph
    graph_target: AttentionGraph


class GraphCache:
    """Memoizes per-block node sets, adjacencies and depth maps for a scenario."""

    def __init__(self, scenario: UrbanScenario, strategy: EncodingStrategy):
        self.scenario = scenario
        self.strategy = strategy
        self._cells: dict = {}
        self._graphs: dict = {}
        self._depth: dict = {}

    def cells(self, b: BlockIndex) -> np.ndarray:
        if b not in self._cells:
            self._cells[b] = block_free_cells(self.scenario, b)
        return self._cells[b]

    def depth(self, f_mhz: float):
        if f_mhz not in self._depth:
            self._depth[f_mhz] = radio_depth_map(self.scenario, self.strategy.depth, f_mhz)
        return self._depth[f_mhz]

    def graph(self, b: BlockIndex, f_mhz: float) -> AttentionGraph:
        # only model-based graphs depend on frequency
        key = (b, f_mhz if self.strategy.kind == "model" else None)
        if key not in self._graphs:
            cells = self.cells(b)
            depth = self.depth(f_mhz) if self.strategy.kind == "model" else None
            pairs = encode_pairs(cells, self.scenario, self.strategy, depth)
            self._graphs[key] = AttentionGraph(pairs_to_adjacency(pairs, len(cells)))
        return self._graphs[key]

    def block(self, b: BlockIndex, observed_grid: np.ndarray, f_obv: float, f_target: float,
              bounds: NormBounds) -> BlockGraphs:
        cells = self.cells(b)
        obs = observed_grid[cells[:, 0], cells[:, 1]]
        X = assemble_features(self.scenario, cells, obs, f_obv, f_target, bounds)
        return BlockGraphs(b, cells, X, self.graph(b, f_obv), self.graph(b, f_target))


@dataclass
class RadioGat:
    """A trained network plus what inference needs to reproduce its inputs."""

    model: GatModel
    bounds: NormBounds
    config: TrainingConfig
    loss_trace: list[float] = field(default_factory=list)
    masks: dict = field(default_factory=dict)


def observed_grid(truth: RadiomapTensor, f_mhz: float, mask: np.ndarray) -> np.ndarray:
    """Ground truth at ``f_mhz`` where ``mask`` is set, NaN elsewhere."""
    g = truth.grid(f_mhz)
    return np.where(mask, g, np.nan)


def _prepare_training(scenario, truth, split, cfg):
    b1 = list(split.b1)
    if not b1:
        raise ValueError("B1 is empty")
    obs_mask = sample_mask(scenario, cfg.sampling_rate, cfg.f_obv, cfg.seed, b1)
    obs = observed_grid(truth, cfg.f_obv, obs_mask)
    labels = {f: label_mask(scenario, cfg.mask_fraction, f, cfg.seed, b1) for f in cfg.targets}
    in_b1 = np.zeros_like(obs_mask)
    for b in b1:
        c = block_free_cells(scenario, b)
        in_b1[c[:, 0], c[:, 1]] = True
    label_vals = np.concatenate([truth.grid(f)[labels[f] & in_b1] for f in cfg.targets])
    obs_vals = obs[obs_mask & in_b1]
    if label_vals.size == 0:
        raise ValueError("no masked (labelled) nodes in B1")
    if obs_vals.size == 0:
        raise ValueError("no observations in B1")
    bounds = compute_bounds(scenario, obs_vals, label_vals, cfg.rss_pad)
    return obs, obs_mask, labels, bounds


def train(scenario: UrbanScenario, truth: RadiomapTensor, split: BlockSplit, cfg: TrainingConfig,
          cache: GraphCache | None = None, progress=None) -> RadioGat:
    """Masked-loss training: one Adam step per B1 block, blocks shuffled each epoch."""
    for f in cfg.targets:
        if f == cfg.f_obv:
            raise ValueError("f_target must differ from f_obv")
        scenario.frequency_index(f)
    scenario.frequency_index(cfg.f_obv)
    cache = cache or GraphCache(scenario, cfg.strategy)
    obs, obs_mask, labels, bounds = _prepare_training(scenario, truth, split, cfg)

    model = GatModel.init(N_FEATURES, hidden=cfg.hidden, seed=cfg.seed)
    state = AdamState(lr=cfg.lr)
    params = model.parameters()
    rng = np.random.default_rng([cfg.seed, 0x7A1])
    targets = cfg.targets
    prepared = {}
    for b in split.b1:
        for f in targets:
            bg = cache.block(b, obs, cfg.f_obv, f, bounds)
            y = bounds.norm_target(truth.grid(f)[bg.cells[:, 0], bg.cells[:, 1]])
            z = labels[f][bg.cells[:, 0], bg.cells[:, 1]]
            prepared[(b, f)] = (bg, y, z)

    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for i in rng.permutation(len(split.b1)):
            b = split.b1[i]
            f = targets[step % len(targets)]
            step += 1
            bg, y, z = prepared[(b, f)]
            if len(bg.cells) == 0 or not z.any():
                continue
            model.zero_grad()
            pred = model.forward(bg.features, bg.graph_obv, bg.graph_target)
            loss = masked_loss(pred, y, z)
            loss.backward()
            adam_step(state, [p.data for p in params], [p.grad for p in params])
            losses.append(float(loss.data))
        trace.append(float(np.mean(losses)) if losses else 0.0)
        if progress is not None:
            progress(epoch, trace[-1])

    masks = {f"obs_{cfg.f_obv:g}": obs_mask}
    masks.update({f"label_{f:g}": m for f, m in labels.items()})
    return RadioGat(model, bounds, cfg, trace, masks)


# -- inference -----------------------------------------------------------------


def predict(trained: RadioGat, scenario: UrbanScenario, observed: np.ndarray, b: BlockIndex,
            f_target: float, cache: GraphCache | None = None) -> np.ndarray:
    """De-normalized dBm prediction for every free grid of ``b`` (row-major order).

    ``observed`` is a ``(rows, cols)`` grid of f_obv observations, NaN where unobserved.
    """
    scenario.frequency_index(f_target)
    cfg = trained.config
    cache = cache or GraphCache(scenario, cfg.strategy)
    bg = cache.block(b, np.asarray(observed, dtype=float), cfg.f_obv, f_target, trained.bounds)
    if len(bg.cells) == 0:
        return np.zeros(0)
    if trained.model.in_dim != bg.features.shape[1]:
        raise ValueError("model input width does not match the feature layout")
    out = trained.model.forward(bg.features, bg.graph_obv, bg.graph_target)
    return trained.bounds.denorm_target(out.data[:, 0])


def multiband_splice(trained: RadioGat, scenario: UrbanScenario, observed: np.ndarray, blocks=None,
                     f_targets=None, overwrite_observed: bool = False,
                     cache: GraphCache | None = None) -> RadiomapTensor:
    """Predict every listed frequency over ``blocks`` and stack them into one tensor.

    Grids outside ``blocks`` and building grids are NaN.
    """
    f_targets = tuple(f_targets or scenario.frequencies_mhz)
    blocks = list(blocks) if blocks is not None else scenario.blocks()
    cache = cache or GraphCache(scenario, trained.config.strategy)
    values = np.full((scenario.rows, scenario.cols, len(f_targets)), np.nan)
    obs = np.asarray(observed, dtype=float)
    for k, f in enumerate(f_targets):
        for b in blocks:
            cells = cache.cells(b)
            if len(cells) == 0:
                continue
            values[cells[:, 0], cells[:, 1], k] = predict(trained, scenario, obs, b, f, cache)
        if overwrite_observed and abs(f - trained.config.f_obv) < 1e-9:
            have = np.isfinite(obs)
            values[have, k] = obs[have]
    return RadiomapTensor(values.reshape(-1, len(f_targets)), scenario.rows, scenario.cols, f_targets)


# -- run directories -----------------------------------------------------------


def save_run(trained: RadioGat, out_dir, extra: dict | None = None) -> Path:
    """Config snapshot, loss trace, checkpoint and the sample masks used."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = trained.config
    snapshot = {"config": cfg.to_dict(), "config_hash": cfg.digest(), "bounds": asdict(trained.bounds),
                **(extra or {})}
    (out / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    with open(out / "loss_trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, v in enumerate(trained.loss_trace):
            w.writerow([i, repr(v)])
    save_checkpoint(trained.model, out / "model.ckpt",
                    {"config_hash": cfg.digest(), "seed": cfg.seed, "epoch": cfg.epochs})
    np.savez_compressed(out / "masks.npz", **trained.masks)
    return out


def load_run(run_dir) -> RadioGat:
    from radiomap.nn.checkpoint import load_checkpoint

    run_dir = Path(run_dir)
    snap = json.loads((run_dir / "config.json").read_text())
    model, _ = load_checkpoint(run_dir / "model.ckpt")
    cfg = TrainingConfig.from_dict(snap["config"])
    bounds = NormBounds(**snap["bounds"])
    trace = []
    with open(run_dir / "loss_trace.csv") as fh:
        for rec in csv.DictReader(fh):
            trace.append(float(rec["mean_loss"]))
    with np.load(run_dir / "masks.npz") as z:
        masks = {k: z[k] for k in z.files}
    return RadioGat(model, bounds, cfg, trace, masks)


def with_overrides(cfg: TrainingConfig, **kw) -> TrainingConfig:
    return replace(cfg, **kw)
