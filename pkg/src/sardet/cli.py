"""Command-line entry point: ``sardet gen-data | train | eval | infer | ablate``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, desk_preset, load_config
from .data.dataset import load_split, save_synthetic
from .tensor import io as tio

log = logging.getLogger("sardet")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else desk_preset()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(run={"seed": args.seed})
    over = {}
    if getattr(args, "iou_thresh", None) is not None:
        over["iou_threshold"] = args.iou_thresh
    if getattr(args, "score_thresh", None) is not None:
        over["score_threshold"] = args.score_thresh
    return cfg.with_overrides(nms=over) if over else cfg


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise SystemExit(f"error: output directory {path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.with_overrides(data={"synth_seed": args.seed})
    n_train = cfg.data.n_train if args.n_train is None else args.n_train
    n_test = cfg.data.n_test if args.n_test is None else args.n_test
    cfg = cfg.with_overrides(data={"n_train": n_train, "n_test": n_test})
    out = _prepare_out(Path(args.out), args.force)
    manifest = save_synthetic(cfg.synth_config(), n_train, n_test, out, cfg.hash())
    (out / "config.ini").write_text(cfg.to_text())
    print(f"wrote {n_train} train / {n_test} test images to {out} (config {manifest['config_hash'][:12]})")
    return 0


def cmd_train(args) -> int:
    from .train import train

    cfg = _config(args)
    out = Path(args.out or cfg.run.out_dir)
    if args.resume is None:
        _prepare_out(out, args.force)
    rec = train(cfg, out, resume=args.resume, progress=not args.quiet)
    if rec.report is not None:
        print(f"AP50 {rec.report.ap50:.4f}  AP50:95 {rec.report.ap_50_95:.4f}  P {rec.report.precision:.4f}  R {rec.report.recall:.4f}")
    print(f"checkpoint: {rec.checkpoint}")
    return 0


def _load_ckpt(args):
    from .train import load_checkpoint

    expect = _config(args).hash() if args.config else None
    ck = load_checkpoint(args.checkpoint, expect_hash=expect)
    cfg = ck.cfg
    over = {}
    if args.iou_thresh is not None:
        over["iou_threshold"] = args.iou_thresh
    if args.score_thresh is not None:
        over["score_threshold"] = args.score_thresh
    return ck, cfg, over


def cmd_eval(args) -> int:
    from .eval import export_pr_curve
    from .train import build_data, evaluate

    ck, cfg, over = _load_ckpt(args)
    model = ck.model()
    split = load_split(args.data) if args.data else build_data(cfg)[args.split]
    rep = evaluate(model, split, cfg, over.get("score_threshold"))
    rep.config_hash = ck.config_hash
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.json").write_text(rep.to_json())
    if rep.pr_curve:
        export_pr_curve(rep, out / f"pr_curve_{ck.config_hash[:12]}.csv")
    print(json.dumps({k: getattr(rep, k) for k in ("precision", "recall", "ap50", "ap75", "ap_50_95")}))
    return 0


def _read_image(path: Path, size: int):
    from .data.dataset import _load_gray
    from .data.letterbox import letterbox

    if path.suffix == ".bin":
        img = tio.load(path)
        if img.ndim == 2:
            img = np.broadcast_to(img, (3,) + img.shape).copy()
    else:
        img = _load_gray(path)
    return letterbox(img, [], size)


def cmd_infer(args) -> int:
    from .train import predict

    ck, cfg, over = _load_ckpt(args)
    model = ck.model()
    iou_t = over.get("iou_threshold", cfg.nms.iou_threshold)
    score_t = over.get("score_threshold", cfg.nms.score_threshold)
    results = []
    for p in map(Path, args.image):
        img, _, info = _read_image(p, cfg.data.input_size)
        dets = predict(model, img[None], score_t, iou_t)[0]
        results.append(
            {
                "image": str(p),
                "detections": [
                    {"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h, "score": s}
                    for b, s in ((info.inverse(b), s) for b, s in dets)
                ],
            }
        )
    doc = {"config_hash": ck.config_hash, "score_threshold": score_t, "iou_threshold": iou_t, "images": results}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def cmd_ablate(args) -> int:
    from .ablate import run_ablation, write_tables

    base = _config(args)
    seeds = args.seeds or [base.run.seed]
    out = _prepare_out(Path(args.out), args.force)
    rows = run_ablation(base, args.axis, seeds, out, progress=not args.quiet)
    md, cs = write_tables(rows, base, args.axis, out)
    print(md.read_text())
    print(f"tables: {md} {cs}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sardet", description="Small-ship detection on SAR imagery (CPU, numpy).")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="INI run config (defaults to the desk preset)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    def thresholds(sp):
        sp.add_argument("--iou-thresh", type=float, help="NMS IoU threshold")
        sp.add_argument("--score-thresh", type=float, help="detection score threshold")

    g = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(g)
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a detector")
    common(t, out_required=False)
    thresholds(t)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    thresholds(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="split directory written by gen-data (defaults to the config's data)")
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="detect ships in images")
    common(i, out_required=False)
    thresholds(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("image", nargs="+", help="image files (.png/.jpg or .bin tensors)")
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("ablate", help="train variants along one axis and tabulate")
    common(a)
    thresholds(a)
    a.add_argument("--axis", required=True, choices=("loss", "cid", "ppa", "components"))
    a.add_argument("--seeds", type=int, nargs="+")
    a.add_argument("--quiet", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .train import HashMismatch

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, HashMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
