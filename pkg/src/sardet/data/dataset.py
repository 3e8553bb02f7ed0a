"""In-memory detection splits and their on-disk layouts."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..boxes import BBox
from ..tensor import io as tio
from .annotations import Annotation, parse_coco, parse_voc, write_coco
from .letterbox import LetterboxInfo, letterbox
from .synth import SynthConfig, generate_scene


@dataclass
class Split:
    """Images already at network resolution plus their original annotations."""

    images: np.ndarray  # (N, 3, S, S)
    annotations: list[Annotation]
    transforms: list[LetterboxInfo] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.annotations)

    @property
    def input_size(self) -> int:
        return self.images.shape[-1]

    def net_boxes(self, i: int) -> list[BBox]:
        return [self.transforms[i].forward(b) for b in self.annotations[i].boxes]

    def subset(self, idx) -> "Split":
        idx = list(idx)
        return Split(self.images[idx], [self.annotations[i] for i in idx], [self.transforms[i] for i in idx])


def synthetic_split(cfg: SynthConfig, start: int, count: int) -> Split:
    if count == 0:
        S = cfg.image_size
        return Split(np.zeros((0, 3, S, S)), [], [])
    imgs, anns = [], []
    for i in range(start, start + count):
        img, ann = generate_scene(cfg, i)
        imgs.append(img[0])
        anns.append(ann)
    info = LetterboxInfo(cfg.image_size / cfg.nominal_size, 0, 0)
    return Split(np.stack(imgs), anns, [info] * count)


def synthetic_dataset(cfg: SynthConfig, n_train: int, n_test: int) -> dict[str, Split]:
    """Train scenes are indices [0, n_train), test scenes follow them."""
    return {"train": synthetic_split(cfg, 0, n_train), "test": synthetic_split(cfg, n_train, n_test)}


# ---------------------------------------------------------------------------
# persisted synthetic datasets
# ---------------------------------------------------------------------------

def _manifest_text(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def save_split(split: Split, directory: Path) -> None:
    img_dir = directory / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for img, ann in zip(split.images, split.annotations):
        name = f"{ann.image_id}.bin"
        tio.save(img_dir / name, img)
        names.append(f"images/{name}")
    (directory / "annotations.json").write_text(write_coco(split.annotations, names))


def save_synthetic(cfg: SynthConfig, n_train: int, n_test: int, out_dir, config_hash: str = "") -> dict[str, str]:
    out = Path(out_dir)
    data = synthetic_dataset(cfg, n_train, n_test)
    for name, split in data.items():
        save_split(split, out / name)
    manifest = {
        "format": "sardet-synthetic-v1",
        "config_hash": config_hash,
        "seed": cfg.seed,
        "image_size": cfg.image_size,
        "nominal_size": cfg.nominal_size,
        "n_train": n_train,
        "n_test": n_test,
        "train_boxes": sum(len(a.boxes) for a in data["train"].annotations),
        "test_boxes": sum(len(a.boxes) for a in data["test"].annotations),
        "synth_config": json.dumps(cfg.__dict__, sort_keys=True),
    }
    (out / "manifest.txt").write_text(_manifest_text(manifest))
    return {k: str(v) for k, v in manifest.items()}


def load_split(directory) -> Split:
    """Load a directory written by :func:`save_split` (tensor images + COCO JSON)."""
    directory = Path(directory)
    doc = json.loads((directory / "annotations.json").read_text())
    anns = parse_coco(json.dumps(doc))
    files = {str(img["id"]): img["file_name"] for img in doc["images"]}
    if not anns:
        return Split(np.zeros((0, 3, 0, 0)), [], [])
    imgs = [tio.load(directory / files[a.image_id]) for a in anns]
    S = imgs[0].shape[-1]
    infos = [LetterboxInfo(S / max(a.image_size), 0, 0) for a in anns]
    return Split(np.stack(imgs), anns, infos)


def load_synthetic(root) -> dict[str, Split]:
    root = Path(root)
    return {name: load_split(root / name) for name in ("train", "test")}


# ---------------------------------------------------------------------------
# real-data layouts
# ---------------------------------------------------------------------------

def _load_gray(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return np.broadcast_to(arr, (3,) + arr.shape).copy()


def load_voc_dir(root, target: int, image_ids: list[str] | None = None) -> Split:
    """SSDD-style layout: ``Annotations/*.xml`` and ``JPEGImages/<id>.<ext>``."""
    root = Path(root)
    xmls = sorted((root / "Annotations").glob("*.xml"))
    if image_ids is not None:
        wanted = set(image_ids)
        xmls = [p for p in xmls if p.stem in wanted]
    imgs, anns, infos = [], [], []
    for xml in xmls:
        ann = parse_voc(xml.read_text())
        ann.image_id = xml.stem
        cands = sorted((root / "JPEGImages").glob(xml.stem + ".*"))
        if not cands:
            raise FileNotFoundError(f"no image for annotation {xml.name}")
        img, _, info = letterbox(_load_gray(cands[0]), [], target)
        imgs.append(img)
        anns.append(ann)
        infos.append(info)
    return Split(np.stack(imgs) if imgs else np.zeros((0, 3, target, target)), anns, infos)


def load_coco_dir(root, annotation_file: str, target: int, image_dir: str = "images") -> Split:
    """HRSID-style layout: one COCO JSON plus an image directory."""
    root = Path(root)
    text = (root / annotation_file).read_text()
    doc = json.loads(text)
    files = {str(img["id"]): img["file_name"] for img in doc["images"]}
    imgs, anns, infos = [], [], []
    for ann in parse_coco(text):
        img, _, info = letterbox(_load_gray(root / image_dir / files[ann.image_id]), [], target)
        imgs.append(img)
        anns.append(ann)
        infos.append(info)
    return Split(np.stack(imgs) if imgs else np.zeros((0, 3, target, target)), anns, infos)


def tree_digest(root) -> str:
    """SHA-256 over every file path and content below ``root``."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
