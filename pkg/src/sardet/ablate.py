"""Ablation sweeps: train each variant of a base config under identical data and seeds."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, diff
from .train import build_data, train

COLUMNS = ["variant", "seed", "P", "R", "mAP@0.5", "mAP@0.5:0.95", "delta_mAP@0.5:0.95", "config_hash"]


def variants(base: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    if axis == "loss":
        return [(k, base.with_overrides(loss={"kind": k})) for k in ("nwd", "giou", "diou")]
    if axis == "cid":
        return [(f"cid={'on' if v else 'off'}", base.with_overrides(model={"enable_cid": v})) for v in (False, True)]
    if axis == "ppa":
        return [(f"ppa={'on' if v else 'off'}", base.with_overrides(model={"enable_ppa": v})) for v in (False, True)]
    if axis == "components":
        out = []
        for name, cid, ppa in (("baseline", False, False), ("+CID", True, False), ("+PPA", False, True), ("+CID+PPA", True, True)):
            out.append((name, base.with_overrides(model={"enable_cid": cid, "enable_ppa": ppa})))
        return out
    raise ValueError(f"unknown ablation axis {axis!r}; expected loss, cid, ppa or components")


@dataclass
class AblationRow:
    variant: str
    seed: int
    precision: float
    recall: float
    ap50: float
    ap_50_95: float
    delta: float
    config_hash: str

    def cells(self) -> list:
        return [self.variant, self.seed, self.precision, self.recall, self.ap50, self.ap_50_95, self.delta, self.config_hash]


def run_ablation(base: RunConfig, axis: str, seeds, out_dir, progress: bool = False) -> list[AblationRow]:
    """Train every (variant, seed) pair; deltas are relative to the first variant at the same seed."""
    out = Path(out_dir)
    data = build_data(base)
    rows = []
    for seed in seeds:
        ref = None
        for name, cfg in variants(base, axis):
            cfg = cfg.with_overrides(run={"seed": int(seed)})
            safe = name.replace("+", "p").replace("=", "_")
            rec = train(cfg, out / f"{safe}_s{seed}", data=data, progress=progress)
            rep = rec.report
            ref = rep.ap_50_95 if ref is None else ref
            rows.append(
                AblationRow(name, int(seed), rep.precision, rep.recall, rep.ap50, rep.ap_50_95, rep.ap_50_95 - ref, cfg.hash())
            )
    return rows


def table_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r.cells()])
    return buf.getvalue()


def table_markdown(rows: list[AblationRow], base: RunConfig, axis: str) -> str:
    lines = [f"# Ablation: {axis}", "", f"base config hash: `{base.hash()}`", ""]
    lines.append("| " + " | ".join(COLUMNS) + " |")
    lines.append("|" + "---|" * len(COLUMNS))
    for r in rows:
        cells = [f"{x:.4f}" if isinstance(x, float) else str(x) for x in r.cells()]
        cells[-1] = cells[-1][:12]
        lines.append("| " + " | ".join(cells) + " |")
    names = list(dict.fromkeys(r.variant for r in rows))
    if len({r.seed for r in rows}) > 1:
        lines += ["", "Mean over seeds:", "", "| variant | P | R | mAP@0.5 | mAP@0.5:0.95 | delta |", "|---|---|---|---|---|---|"]
        for n in names:
            sel = [r for r in rows if r.variant == n]
            m = np.mean([[r.precision, r.recall, r.ap50, r.ap_50_95, r.delta] for r in sel], axis=0)
            lines.append(f"| {n} | " + " | ".join(f"{v:.4f}" for v in m) + " |")
    lines += ["", "Config differences from the base (only the swept axis may appear):", ""]
    for name, cfg in variants(base, axis):
        d = diff(base, cfg)
        text = ", ".join(f"{k}: {a} -> {b}" for k, a, b in d) or "(identical to base)"
        lines.append(f"- {name}: {text}")
    return "\n".join(lines) + "\n"


def write_tables(rows: list[AblationRow], base: RunConfig, axis: str, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    md, cs = out / f"ablation_{axis}.md", out / f"ablation_{axis}.csv"
    md.write_text(table_markdown(rows, base, axis))
    cs.write_text(table_csv(rows))
    return md, cs
