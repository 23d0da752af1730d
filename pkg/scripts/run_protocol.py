"""Run one of the experiment configs in scripts/configs and print a mean-RMSE table.

    python3 scripts/run_protocol.py methods --out runs/methods
    python3 scripts/run_protocol.py sampling --workers 4
"""

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from radiomap.experiment import mean_table, plan_from_config, run_experiment
from radiomap.scenario import read_config

CONFIGS = Path(__file__).resolve().parent / "configs"


def main():
    names = sorted(p.stem for p in CONFIGS.glob("*.ini"))
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("protocol", choices=names)
    ap.add_argument("--out", type=Path, help="report directory (default runs/<protocol>)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--epochs", type=int, help="override training epochs, e.g. for a quick look")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    path = CONFIGS / f"{args.protocol}.ini"
    plan = replace(plan_from_config(read_config(path), path), workers=args.workers)
    if args.epochs is not None:
        plan = replace(plan, training=replace(plan.training, epochs=args.epochs))
    out = args.out or Path("runs") / args.protocol
    t0 = time.perf_counter()

    def progress(r):
        print(f"  {r.scenario} {r.method} rate={r.rate:g} seed={r.seed}: {r.rmse_db:.3f} dB "
              f"({time.perf_counter() - t0:.0f} s)", flush=True)

    results = run_experiment(plan, out, progress=progress)
    print()
    print(mean_table(results))
    print(f"\nreports written to {out}")


if __name__ == "__main__":
    main()
