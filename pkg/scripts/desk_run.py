"""Train the desk preset over several seeds and print a one-line summary per seed.

    python scripts/desk_run.py --seeds 0 1 2 --out runs/desk
"""

import argparse
import json
from pathlib import Path

from sardet.config import desk_preset
from sardet.train import build_data, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--epochs", type=int, default=None, help="override the preset's 60 epochs")
    args = ap.parse_args()

    base = desk_preset()
    if args.epochs:
        base = base.with_overrides(run={"epochs": args.epochs})
    data = build_data(base)
    summary = []
    for seed in args.seeds:
        cfg = base.with_overrides(run={"seed": seed})
        rec = train(cfg, Path(args.out) / f"seed{seed}", data=data, progress=True)
        rep = rec.report
        row = {"seed": seed, "ap50": rep.ap50, "ap_50_95": rep.ap_50_95, "nwd_c": rec.c, "wall_clock_s": round(rec.wall_clock, 1)}
        print(json.dumps(row))
        summary.append(row)
    hits = sum(r["ap50"] >= 0.80 for r in summary)
    print(f"{hits}/{len(summary)} seeds reach AP50 >= 0.80")


if __name__ == "__main__":
    main()
