"""SGD training loop, checkpoints, inference and evaluation for the detector."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BBox, nms
from .config import RunConfig, parse_config
from .data.dataset import Split, load_coco_dir, load_synthetic, load_voc_dir, read_manifest, synthetic_dataset
from .eval import EvalReport, coco_suite
from .nn.detector import Detector, decode_predictions, detection_loss
from .rng import Rng
from .tensor import io as tio
from .tensor.core import Tensor, backward, no_grad

log = logging.getLogger(__name__)

LOSS_HEADER = ["epoch", "step", "total", "box", "obj"]


class TrainingError(RuntimeError):
    pass


class HashMismatch(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def build_data(cfg: RunConfig) -> dict[str, Split]:
    d = cfg.data
    if d.kind == "synthetic":
        return synthetic_dataset(cfg.synth_config(), d.n_train, d.n_test)
    if d.kind == "synthetic_dir":
        data = load_synthetic(d.path)
        if data["train"].input_size != d.input_size and len(data["train"]):
            raise ValueError(f"dataset at {d.path} has input size {data['train'].input_size}, config wants {d.input_size}")
        return data
    if d.kind == "voc":
        root = Path(d.path)
        out = {}
        for name in ("train", "test"):
            ids_file = root / "ImageSets" / "Main" / f"{name}.txt"
            ids = ids_file.read_text().split() if ids_file.exists() else None
            out[name] = load_voc_dir(root, d.input_size, ids)
        return out
    return {
        "train": load_coco_dir(d.path, d.train_annotations, d.input_size, d.image_dir),
        "test": load_coco_dir(d.path, d.test_annotations, d.input_size, d.image_dir),
    }


def resolve_c(cfg: RunConfig, train: Split) -> float:
    """The NWD constant: a fixed number, or the mean sqrt(wh) of training boxes at network scale."""
    if cfg.loss.c != "auto":
        return float(cfg.loss.c)
    sides = [math.sqrt(b.w * b.h) for i in range(len(train)) for b in train.net_boxes(i)]
    if not sides:
        raise ValueError("loss.c = auto needs at least one training box")
    return float(np.mean(sides))


def dihedral(image: np.ndarray, boxes: list[BBox], k: int) -> tuple[np.ndarray, list[BBox]]:
    """Apply symmetry ``k`` in 0..7 of the square to a (C, S, S) image and its boxes.

    Bit 0 flips horizontally, bit 1 vertically, bit 2 transposes (applied last).
    """
    S = image.shape[-1]
    out = image
    if k & 1:
        out = out[:, :, ::-1]
        boxes = [BBox(S - b.cx, b.cy, b.w, b.h) for b in boxes]
    if k & 2:
        out = out[:, ::-1, :]
        boxes = [BBox(b.cx, S - b.cy, b.w, b.h) for b in boxes]
    if k & 4:
        out = out.transpose(0, 2, 1)
        boxes = [BBox(b.cy, b.cx, b.h, b.w) for b in boxes]
    return np.ascontiguousarray(out), boxes


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class SGD:
    """SGD with momentum (``v = mu*v + g``; ``p -= lr*v``) and L2 decay on conv/linear weights."""

    def __init__(self, named_params, lr, momentum=0.9, weight_decay=0.0, nesterov=False):
        self.params = list(named_params)
        self.lr, self.momentum, self.weight_decay, self.nesterov = lr, momentum, weight_decay, nesterov
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and p.data.ndim > 1:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= self.lr * (g + self.momentum * v if self.nesterov else v)


class ModelEMA:
    """Exponential moving average of parameters and BatchNorm buffers.

    The decay ramps as ``decay * (1 - exp(-updates / tau))`` so early, poorly
    trained weights are forgotten quickly.
    """

    def __init__(self, model: Detector, decay: float, tau: float, updates: int = 0, state: dict | None = None):
        self.decay, self.tau, self.updates = decay, tau, updates
        self.state = {k: v.copy() for k, v in (state or model.state_dict()).items()}

    def update(self, model: Detector) -> None:
        self.updates += 1
        d = self.decay * (1.0 - math.exp(-self.updates / self.tau))
        for k, v in model.state_dict().items():
            e = self.state[k]
            e *= d
            e += (1.0 - d) * v


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _manifest(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def save_checkpoint(
    path, model: Detector, opt: SGD, cfg: RunConfig, epoch: int, c: float, metrics: dict, ema: ModelEMA | None = None
) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    text = cfg.to_text()
    (tmp / "config.ini").write_text(text)
    state = model.state_dict()
    state.update({f"momentum/{k}": v for k, v in opt.velocity.items()})
    if ema is not None:
        state.update({f"ema/{k}": v for k, v in ema.state.items()})
    names = sorted(state)
    blob = io.BytesIO()
    for name in names:
        blob.write(tio.dumps(state[name]))
    (tmp / "tensors.bin").write_bytes(blob.getvalue())
    (tmp / "index.txt").write_text("".join(f"{n}\n" for n in names))
    items = {"config_hash": cfg.hash(), "seed": cfg.run.seed, "epoch": epoch, "nwd_c": repr(c)}
    if ema is not None:
        items["ema_updates"] = ema.updates
    items.update({k: repr(float(v)) for k, v in metrics.items()})
    (tmp / "manifest.txt").write_text(_manifest(items))
    if path.exists():
        shutil.rmtree(path)
    tmp.rename(path)
    return path


def _split_blob(buf: bytes, n: int) -> list[np.ndarray]:
    out, pos = [], 0
    for _ in range(n):
        rank = int(np.frombuffer(buf, "<u4", 1, pos + 8)[0])
        size = int(np.prod(np.frombuffer(buf, "<u8", rank, pos + 12))) if rank else 1
        end = pos + 12 + 8 * rank + 8 * size
        out.append(tio.loads(buf[pos:end]))
        pos = end
    if pos != len(buf):
        raise ValueError("trailing bytes in checkpoint tensors")
    return out


@dataclass
class Checkpoint:
    cfg: RunConfig
    config_hash: str
    epoch: int
    c: float
    state: dict
    momentum: dict
    manifest: dict
    ema: dict = field(default_factory=dict)

    def model(self, averaged: bool = True) -> Detector:
        """The detector; with ``averaged`` the EMA weights are loaded when present."""
        m = Detector(Rng(self.cfg.run.seed).split("init"), self.cfg.detector_config(self.c))
        m.load_state_dict(self.ema if averaged and self.ema else self.state)
        return m


def load_checkpoint(path, expect_hash: str | None = None) -> Checkpoint:
    path = Path(path)
    manifest = read_manifest(path / "manifest.txt")
    text = (path / "config.ini").read_text()
    cfg = parse_config(text)
    stored = manifest["config_hash"]
    if cfg.hash() != stored:
        raise HashMismatch(f"{path}: config.ini hashes to {cfg.hash()[:12]} but the manifest says {stored[:12]}")
    if expect_hash is not None and expect_hash != stored:
        raise HashMismatch(
            f"checkpoint {path} was produced by config {stored[:12]}, not {expect_hash[:12]}; "
            "use the matching config or retrain"
        )
    names = (path / "index.txt").read_text().split()
    arrays = _split_blob((path / "tensors.bin").read_bytes(), len(names))
    state, mom, ema = {}, {}, {}
    for n, a in zip(names, arrays):
        if n.startswith("momentum/"):
            mom[n[len("momentum/") :]] = a
        elif n.startswith("ema/"):
            ema[n[len("ema/") :]] = a
        else:
            state[n] = a
    return Checkpoint(cfg, stored, int(manifest["epoch"]), float(manifest["nwd_c"]), state, mom, manifest, ema)


# ---------------------------------------------------------------------------
# inference and evaluation
# ---------------------------------------------------------------------------

def predict(model: Detector, images: np.ndarray, score_threshold: float, iou_threshold: float, batch: int = 16):
    """Detections per image in network-input pixels, after NMS."""
    model.eval()
    out = []
    S = images.shape[-1]
    with no_grad():
        for i in range(0, len(images), batch):
            raw = model(Tensor(images[i : i + batch]))
            for dets in decode_predictions(raw, S, score_threshold):
                out.append(nms(dets, iou_threshold, score_threshold)[:100])
    return out


def to_original(split: Split, dets) -> dict:
    out = {}
    for i, ds in enumerate(dets):
        info = split.transforms[i]
        out[split.annotations[i].image_id] = [(info.inverse(b), s) for b, s in ds]
    return out


def evaluate(model: Detector, split: Split, cfg: RunConfig, score_threshold: float | None = None) -> EvalReport:
    """COCO-style evaluation in original image coordinates."""
    raw = predict(model, split.images, cfg.nms.eval_score_threshold, cfg.nms.iou_threshold)
    dets = to_original(split, raw)
    gts = {a.image_id: a.boxes for a in split.annotations}
    sizes = {a.image_id: a.image_size for a in split.annotations}
    areas = {a.image_id: a.box_areas() for a in split.annotations}
    thr = cfg.nms.score_threshold if score_threshold is None else score_threshold
    rep = coco_suite(dets, gts, sizes, areas, score_threshold=thr)
    rep.config_hash = cfg.hash()
    return rep


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    c: float
    epoch_losses: list[dict] = field(default_factory=list)
    report: EvalReport | None = None
    checkpoint: str = ""
    best_checkpoint: str = ""
    best_ap50: float = -1.0
    wall_clock: float = 0.0

    def to_json(self) -> str:
        d = {
            "config_hash": self.config_hash,
            "nwd_c": self.c,
            "checkpoint": self.checkpoint,
            "best_checkpoint": self.best_checkpoint,
            "best_ap50": self.best_ap50,
            "wall_clock_s": self.wall_clock,
            "epoch_losses": self.epoch_losses,
            "report": json.loads(self.report.to_json()) if self.report else None,
        }
        return json.dumps(d, indent=2)


def _dump_batch(out_dir: Path, epoch: int, step: int, images, targets, split: Split, idx) -> Path:
    d = out_dir / f"nan_batch_e{epoch}_s{step}"
    d.mkdir(parents=True, exist_ok=True)
    tio.save(d / "images.bin", images)
    doc = {
        "epoch": epoch,
        "step": step,
        "image_ids": [split.annotations[i].image_id for i in idx],
        "targets": [[b.as_array().tolist() for b in t] for t in targets],
    }
    (d / "batch.json").write_text(json.dumps(doc, indent=1))
    return d


def _epoch_means(rows: list[list]) -> list[dict]:
    by_epoch: dict[int, list] = {}
    for r in rows:
        by_epoch.setdefault(int(r[0]), []).append([float(x) for x in r[2:]])
    return [
        dict(zip(("epoch", "total", "box", "obj"), [e] + np.mean(v, axis=0).tolist()))
        for e, v in sorted(by_epoch.items())
    ]


def _read_loss_rows(path: Path, upto_epoch: int) -> list[list]:
    rows = []
    with path.open() as fh:
        for r in csv.reader(line for line in fh if not line.startswith("#")):
            if r and r[0] != "epoch" and int(r[0]) <= upto_epoch:
                rows.append(r)
    return rows


def _write_loss_csv(path: Path, cfg_hash: str, rows: list[list]) -> None:
    buf = io.StringIO()
    buf.write(f"# config_hash {cfg_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_HEADER)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _eval_model(model: Detector, ema: ModelEMA | None) -> Detector:
    if ema is None:
        return model
    m = Detector(Rng(0), model.cfg)
    m.load_state_dict(ema.state)
    return m


def train(
    cfg: RunConfig,
    out_dir=None,
    data: dict[str, Split] | None = None,
    resume: str | Path | None = None,
    stop_after: int | None = None,
    progress: bool = False,
) -> RunRecord:
    """Train from scratch (or resume) and write checkpoints plus ``loss.csv`` under ``out_dir``.

    ``stop_after`` ends the run after that epoch (used to test resumption).
    """
    t0 = time.perf_counter()
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()
    (out / "config.ini").write_text(cfg.to_text())
    data = data if data is not None else build_data(cfg)
    train_split, test_split = data["train"], data["test"]
    if len(train_split) == 0:
        raise ValueError("empty training split")

    c = resolve_c(cfg, train_split)
    log.info("run %s: nwd c = %.4f", h[:12], c)
    seed_rng = Rng(cfg.run.seed)
    model = Detector(seed_rng.split("init"), cfg.detector_config(c))
    opt = SGD(
        model.named_parameters(),
        cfg.optimizer.lr,
        cfg.optimizer.momentum,
        cfg.optimizer.weight_decay,
        cfg.optimizer.nesterov,
    )
    ema = ModelEMA(model, cfg.run.ema_decay, cfg.run.ema_tau) if cfg.run.ema_decay > 0 else None
    rows: list[list] = []
    start_epoch, best = 0, -1.0
    if resume is not None:
        ck = load_checkpoint(resume, expect_hash=h)
        model.load_state_dict(ck.state)
        for k, v in ck.momentum.items():
            opt.velocity[k][...] = v
        if ema is not None:
            ema = ModelEMA(model, cfg.run.ema_decay, cfg.run.ema_tau, int(ck.manifest["ema_updates"]), ck.ema)
        start_epoch = ck.epoch
        best = float(ck.manifest.get("best_ap50", -1.0))
        rows = _read_loss_rows(out / "loss.csv", ck.epoch)

    targets_all = [train_split.net_boxes(i) for i in range(len(train_split))]
    S = train_split.input_size
    bs = cfg.run.batch_size
    n = len(train_split)
    last_epoch = cfg.run.epochs if stop_after is None else min(stop_after, cfg.run.epochs)
    metrics: dict = {}
    for epoch in range(start_epoch + 1, last_epoch + 1):
        model.train()
        perm = seed_rng.split("shuffle", epoch).generator().permutation(n)
        for step, i in enumerate(range(0, n, bs)):
            idx = perm[i : i + bs]
            images = train_split.images[idx]
            targets = [targets_all[j] for j in idx]
            if cfg.run.augment:
                ks = seed_rng.split("augment", epoch, step).generator().integers(0, 8, len(idx))
                pairs = [dihedral(im, t, int(k)) for im, t, k in zip(images, targets, ks)]
                images = np.stack([p[0] for p in pairs])
                targets = [p[1] for p in pairs]
            model.set_dropout_rng(seed_rng.split("dropout", epoch, step))
            model.zero_grad()
            try:
                outs = model(Tensor(images))
                total, box_t, obj_t = detection_loss(outs, targets, model.cfg.loss, S, model.cfg.obj_weight)
            except FloatingPointError as exc:
                dump = _dump_batch(out, epoch, step, images, targets, train_split, idx)
                raise TrainingError(f"non-finite values at epoch {epoch} step {step}: {exc}; batch dumped to {dump}") from exc
            if not np.isfinite(total.item()):
                dump = _dump_batch(out, epoch, step, images, targets, train_split, idx)
                raise TrainingError(f"NaN loss at epoch {epoch} step {step}; batch dumped to {dump}")
            backward(total * float(len(idx)) if cfg.loss.scale_by_batch else total)
            opt.step()
            if ema is not None:
                ema.update(model)
            rows.append([epoch, step, repr(total.item()), repr(box_t.item()), repr(obj_t.item())])
        metrics = {}
        if test_split is not None and len(test_split) and (epoch % cfg.run.eval_every == 0 or epoch == cfg.run.epochs):
            try:
                rep = evaluate(_eval_model(model, ema), test_split, cfg)
            except FloatingPointError as exc:
                raise TrainingError(f"non-finite values while validating after epoch {epoch} (weights diverged?): {exc}") from exc
            metrics = {"val_ap50": rep.ap50, "val_ap_50_95": rep.ap_50_95}
            if rep.ap50 > best:
                best = rep.ap50
                save_checkpoint(out / "best", model, opt, cfg, epoch, c, {**metrics, "best_ap50": best}, ema)
        save_checkpoint(out / "last", model, opt, cfg, epoch, c, {**metrics, "best_ap50": best}, ema)
        _write_loss_csv(out / "loss.csv", h, rows)
        if progress:
            em = _epoch_means([r for r in rows if int(r[0]) == epoch])[0]
            print(f"epoch {epoch:3d} loss {em['total']:.4f} box {em['box']:.4f} obj {em['obj']:.4f} {metrics}", flush=True)

    record = RunRecord(h, c, _epoch_means(rows), checkpoint=str(out / "last"), best_ap50=best)
    if (out / "best").exists():
        record.best_checkpoint = str(out / "best")
    if last_epoch == cfg.run.epochs and test_split is not None and len(test_split):
        record.report = evaluate(_eval_model(model, ema), test_split, cfg)
    record.wall_clock = time.perf_counter() - t0
    (out / "run_record.json").write_text(record.to_json())
    return record
