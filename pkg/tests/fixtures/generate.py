"""Regenerate the annotation fixture corpora (deterministic).

    python tests/fixtures/generate.py

Writes voc/*.xml, coco/*.json and their malformed counterparts.  The files
are hand-formatted rather than produced by the package writers so that the
parsers are exercised on text the package did not emit.
"""

import json
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
NAMES = ["ship", "ship", "ship", "Ship", "boat", "buoy"]


def voc_text(name, W, H, objects):
    objs = "".join(
        f"  <object>\n    <name>{n}</name>\n    <difficult>0</difficult>\n    <bndbox>\n"
        f"      <xmin>{x1}</xmin>\n      <ymin>{y1}</ymin>\n      <xmax>{x2}</xmax>\n      <ymax>{y2}</ymax>\n"
        "    </bndbox>\n  </object>\n"
        for n, (x1, y1, x2, y2) in objects
    )
    return (
        f"<annotation>\n  <folder>JPEGImages</folder>\n  <filename>{name}.jpg</filename>\n"
        f"  <size>\n    <width>{W}</width>\n    <height>{H}</height>\n    <depth>1</depth>\n  </size>\n"
        f"{objs}</annotation>\n"
    )


def main():
    gen = np.random.default_rng(2024)
    voc = HERE / "voc"
    coco = HERE / "coco"
    for d in (voc, coco, HERE / "voc_bad", HERE / "coco_bad"):
        d.mkdir(exist_ok=True)

    for i in range(50):
        W, H = int(gen.integers(200, 700)), int(gen.integers(200, 500))
        objects = []
        for _ in range(int(gen.integers(0, 6))):
            x1, y1 = int(gen.integers(0, W - 10)), int(gen.integers(0, H - 10))
            x2 = min(W, x1 + int(gen.integers(2, 80)))
            y2 = min(H, y1 + int(gen.integers(2, 80)))
            objects.append((NAMES[int(gen.integers(len(NAMES)))], (x1, y1, x2, y2)))
        (voc / f"{i:06d}.xml").write_text(voc_text(f"{i:06d}", W, H, objects))

    for i in range(50):
        images, anns = [], []
        for j in range(int(gen.integers(1, 4))):
            W, H = (800, 800) if i % 5 == 0 else (int(gen.integers(100, 900)), int(gen.integers(100, 900)))
            img_id = i * 10 + j
            images.append({"id": img_id, "file_name": f"P{img_id:04d}.png", "width": W, "height": H})
            for _ in range(int(gen.integers(0, 5))):
                w, h = round(float(gen.uniform(2, 60)), 2), round(float(gen.uniform(2, 60)), 2)
                x, y = round(float(gen.uniform(0, W - w)), 2), round(float(gen.uniform(0, H - h)), 2)
                anns.append({"id": len(anns) + 1, "image_id": img_id, "category_id": 1, "bbox": [x, y, w, h],
                             "area": round(w * h, 4), "iscrowd": 0})
        doc = {"images": images, "annotations": anns, "categories": [{"id": 1, "name": "ship"}]}
        (coco / f"part{i:02d}.json").write_text(json.dumps(doc, indent=1))

    bad = HERE / "voc_bad"
    (bad / "truncated.xml").write_text(voc_text("t", 100, 100, [("ship", (1, 2, 30, 40))])[:-40])
    (bad / "no_size.xml").write_text("<annotation>\n  <filename>a.jpg</filename>\n</annotation>\n")
    (bad / "wrong_root.xml").write_text("<notes>\n  <size><width>1</width><height>1</height></size>\n</notes>\n")
    (bad / "nan_coord.xml").write_text(voc_text("n", 100, 100, [("ship", ("nan", 2, 30, 40))]))
    (bad / "text_coord.xml").write_text(voc_text("x", 100, 100, [("ship", ("ten", 2, 30, 40))]))
    (bad / "mismatched_tag.xml").write_text("<annotation>\n  <size>\n    <width>10</wdth>\n  </size>\n</annotation>\n")

    bad = HERE / "coco_bad"
    (bad / "truncated.json").write_text('{"images": [{"id": 1, "width": 10, "height": 10}],\n "annotations": [')
    (bad / "unknown_image.json").write_text(json.dumps({
        "images": [{"id": 1, "file_name": "a.png", "width": 50, "height": 50}],
        "annotations": [{"id": 1, "image_id": 1, "bbox": [1, 1, 5, 5]},
                        {"id": 2, "image_id": 7, "bbox": [1, 1, 5, 5]},
                        {"id": 3, "image_id": "x9", "bbox": [1, 1, 5, 5]}]}, indent=1))
    (bad / "missing_sections.json").write_text(json.dumps({"images": []}))
    (bad / "bad_image_entry.json").write_text(json.dumps({"images": [{"id": 1}], "annotations": []}))


if __name__ == "__main__":
    main()
