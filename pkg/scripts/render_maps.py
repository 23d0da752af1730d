"""Render ground truth and reconstructions of one area side by side, with value histograms.

    python3 scripts/render_maps.py --out runs/maps --epochs 200
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from radiomap.evaluation import histogram, render_radiomap
from radiomap.experiment import ExperimentPlan, make_context, run_method
from radiomap.scenario import block_slices
from radiomap.trainer import TrainingConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="synthetic:0")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--rate", type=float, default=0.05)
    ap.add_argument("--f-target", type=float, default=5750.0)
    ap.add_argument("--bin-width", type=float, default=2.0)
    ap.add_argument("--out", type=Path, default=Path("runs/maps"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    plan = ExperimentPlan(scenarios=(args.scenario,), training=TrainingConfig(epochs=args.epochs))
    ctx = make_context(plan, args.scenario, args.seed)
    truth = ctx.truth.grid(args.f_target)
    b2 = np.zeros(truth.shape, dtype=bool)
    for b in ctx.split.b2:
        b2[block_slices(ctx.scenario, b)] = True
    grids = {"truth": np.where(b2, truth, np.nan)}
    for method in ("radiogat", "kriging", "idw"):
        print(f"running {method}", flush=True)
        grids[method] = run_method(plan, ctx, method, args.f_target, args.rate)
    finite = truth[np.isfinite(truth)]
    lo, hi = float(np.percentile(finite, 1)), float(np.percentile(finite, 99))
    origin = float(np.floor(min(np.nanmin(g) for g in grids.values())))
    for name, g in grids.items():
        render_radiomap(g, args.out / f"{name}.ppm", lo_db=lo, hi_db=hi)
        edges, counts = histogram(g, args.bin_width, origin)
        with open(args.out / f"{name}_hist.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lo_db", "hi_db", "count"])
            w.writerows([f"{a:.3f}", f"{b:.3f}", int(n)] for a, b, n in zip(edges[:-1], edges[1:], counts))
    print(f"images and histograms in {args.out} (B2 blocks only; color scale {lo:.1f} to {hi:.1f} dB)")


if __name__ == "__main__":
    main()
