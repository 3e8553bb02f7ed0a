"""Run the loss and component ablations on the desk preset and write markdown + CSV tables.

    python scripts/ablations.py --axes loss components --seeds 0 1 2 --out runs/ablations

Each (variant, seed) pair trains from scratch, so the full default sweep is
21 desk runs.  Variants share the generated dataset and differ from the
base config only on the swept axis.
"""

import argparse
from pathlib import Path

from sardet.ablate import run_ablation, write_tables
from sardet.config import desk_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axes", nargs="+", default=["loss", "components"], choices=["loss", "cid", "ppa", "components"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="runs/ablations")
    args = ap.parse_args()

    base = desk_preset()
    for axis in args.axes:
        rows = run_ablation(base, axis, args.seeds, Path(args.out) / axis, progress=True)
        md, _ = write_tables(rows, base, axis, args.out)
        print(md.read_text())


if __name__ == "__main__":
    main()
