"""PASCAL VOC XML and COCO JSON ship annotations, read and write."""

from __future__ import annotations

import json
import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

from ..boxes import BBox

log = logging.getLogger(__name__)

SHIP_NAMES = ("ship",)


class AnnotationError(ValueError):
    """Malformed annotation input.  ``line`` is set for XML syntax errors,
    ``offenders`` for COCO references to unknown images."""

    def __init__(self, message: str, line: int | None = None, offenders: list | None = None):
        self.line = line
        self.offenders = offenders or []
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class Annotation:
    image_id: str
    boxes: list[BBox]
    image_size: tuple[int, int]  # (W, H)
    source: str = "synthetic"
    areas: list[float] | None = None  # COCO "area" per box when given
    skipped: int = 0  # objects of other classes
    clamped: int = 0  # boxes pulled back inside the image
    rejected: list[str] = field(default_factory=list)

    def __post_init__(self):
        W, H = self.image_size
        if W <= 0 or H <= 0:
            raise ValueError(f"image size must be positive, got {self.image_size}")
        if self.source not in ("voc", "coco", "synthetic"):
            raise ValueError(f"unknown annotation source {self.source!r}")

    def box_areas(self) -> list[float]:
        return list(self.areas) if self.areas is not None else [b.area for b in self.boxes]


def _clamp_corners(x1, y1, x2, y2, W, H):
    c = (min(max(x1, 0.0), W), min(max(y1, 0.0), H), min(max(x2, 0.0), W), min(max(y2, 0.0), H))
    return c, c != (x1, y1, x2, y2)


def _num(node, tag, ctx) -> float:
    el = node.find(tag)
    if el is None or el.text is None:
        raise AnnotationError(f"{ctx}: missing <{tag}>")
    try:
        v = float(el.text.strip())
    except ValueError:
        raise AnnotationError(f"{ctx}: <{tag}> is not a number: {el.text!r}") from None
    if not math.isfinite(v):
        raise AnnotationError(f"{ctx}: <{tag}> is not finite")
    return v


def parse_voc(xml_text: str, class_names=SHIP_NAMES) -> Annotation:
    """Parse one VOC annotation file.

    Corner boxes become center boxes.  Objects of other classes are skipped
    and counted; objects with ``xmax <= xmin`` (or ``ymax <= ymin``) are
    rejected and listed in ``Annotation.rejected``.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line = exc.position[0] if getattr(exc, "position", None) else None
        raise AnnotationError(f"malformed XML: {exc}", line=line) from None
    if root.tag != "annotation":
        raise AnnotationError(f"root element is <{root.tag}>, expected <annotation>")
    size = root.find("size")
    if size is None:
        raise AnnotationError("missing <size>")
    W, H = int(_num(size, "width", "size")), int(_num(size, "height", "size"))
    if W <= 0 or H <= 0:
        raise AnnotationError(f"non-positive image size {W}x{H}")
    fname = root.findtext("filename") or ""
    image_id = fname.rsplit(".", 1)[0] if fname else "unknown"

    boxes, rejected, skipped, clamped = [], [], 0, 0
    for i, obj in enumerate(root.findall("object")):
        name = (obj.findtext("name") or "").strip()
        if name.lower() not in class_names:
            skipped += 1
            continue
        bnd = obj.find("bndbox")
        if bnd is None:
            rejected.append(f"object {i}: missing <bndbox>")
            continue
        ctx = f"object {i}"
        x1, y1, x2, y2 = (_num(bnd, t, ctx) for t in ("xmin", "ymin", "xmax", "ymax"))
        if x2 <= x1 or y2 <= y1:
            rejected.append(f"object {i}: degenerate box ({x1}, {y1}, {x2}, {y2})")
            continue
        (x1, y1, x2, y2), was_clamped = _clamp_corners(x1, y1, x2, y2, W, H)
        if x2 <= x1 or y2 <= y1:
            rejected.append(f"object {i}: box lies outside the image")
            continue
        clamped += was_clamped
        boxes.append(BBox.from_corners(x1, y1, x2, y2))
    if skipped:
        log.warning("%s: skipped %d non-ship objects", image_id, skipped)
    return Annotation(image_id, boxes, (W, H), "voc", skipped=skipped, clamped=clamped, rejected=rejected)


def write_voc(ann: Annotation, filename: str | None = None) -> str:
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = filename or f"{ann.image_id}.jpg"
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(ann.image_size[0])
    ET.SubElement(size, "height").text = str(ann.image_size[1])
    ET.SubElement(size, "depth").text = "1"
    for b in ann.boxes:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = "ship"
        bnd = ET.SubElement(obj, "bndbox")
        for tag, v in zip(("xmin", "ymin", "xmax", "ymax"), b.corners()):
            ET.SubElement(bnd, tag).text = repr(float(v))
    return ET.tostring(root, encoding="unicode")


def parse_coco(json_text: str) -> list[Annotation]:
    """Parse a COCO detection file into one Annotation per image (in ``images`` order)."""
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise AnnotationError("COCO file needs top-level 'images' and 'annotations'")

    images: dict = {}
    for img in doc["images"]:
        try:
            images[img["id"]] = (str(img.get("file_name", img["id"])), int(img["width"]), int(img["height"]))
        except (KeyError, TypeError, ValueError):
            raise AnnotationError(f"bad image entry: {img!r}") from None

    unknown = sorted({a.get("image_id") for a in doc["annotations"] if a.get("image_id") not in images}, key=str)
    if unknown:
        raise AnnotationError(f"annotations reference unknown image ids: {unknown}", offenders=unknown)

    grouped: dict = {k: {"boxes": [], "areas": [], "rejected": [], "clamped": 0} for k in images}
    for a in doc["annotations"]:
        g = grouped[a["image_id"]]
        _, W, H = images[a["image_id"]]
        try:
            x, y, w, h = (float(v) for v in a["bbox"])
        except (KeyError, TypeError, ValueError):
            g["rejected"].append(f"annotation {a.get('id')}: bad bbox")
            continue
        if not all(map(math.isfinite, (x, y, w, h))) or w <= 0 or h <= 0:
            g["rejected"].append(f"annotation {a.get('id')}: degenerate bbox {a['bbox']}")
            continue
        (x1, y1, x2, y2), was_clamped = _clamp_corners(x, y, x + w, y + h, W, H)
        if x2 <= x1 or y2 <= y1:
            g["rejected"].append(f"annotation {a.get('id')}: box outside image")
            continue
        g["clamped"] += was_clamped
        box = BBox.from_corners(x1, y1, x2, y2)
        g["boxes"].append(box)
        g["areas"].append(float(a.get("area", box.area)))

    out = []
    for img_id, (fname, W, H) in images.items():
        g = grouped[img_id]
        out.append(
            Annotation(
                str(img_id), g["boxes"], (W, H), "coco", areas=g["areas"], clamped=g["clamped"], rejected=g["rejected"]
            )
        )
    return out


def write_coco(anns: list[Annotation], file_names: list[str] | None = None) -> str:
    """Serialize annotations as COCO JSON with deterministic ids and key order."""
    images, annotations = [], []
    next_id = 1
    for i, ann in enumerate(anns):
        images.append(
            {
                "id": ann.image_id,
                "file_name": file_names[i] if file_names else f"{ann.image_id}.bin",
                "width": ann.image_size[0],
                "height": ann.image_size[1],
            }
        )
        for b, area in zip(ann.boxes, ann.box_areas()):
            x1, y1, _, _ = b.corners()
            annotations.append(
                {
                    "id": next_id,
                    "image_id": ann.image_id,
                    "category_id": 1,
                    "bbox": [x1, y1, b.w, b.h],
                    "area": area,
                    "iscrowd": 0,
                }
            )
            next_id += 1
    doc = {"images": images, "annotations": annotations, "categories": [{"id": 1, "name": "ship"}]}
    return json.dumps(doc, indent=1)
