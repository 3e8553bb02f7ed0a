import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import coco_reference, match_reference
from sardet.boxes import BBox
from sardet.eval import (
    AREA_RANGES,
    IOU_THRESHOLDS,
    EvalReport,
    MatchResult,
    average_precision,
    coco_suite,
    export_pr_curve,
    match,
    pr_curve_csv,
    precision_recall,
)

G = BBox(10, 10, 4, 4)
FAR = BBox(80, 80, 4, 4)


def test_match_trivial_cases():
    m = match([(G, 0.9)], [G], 0.5)
    assert (m.n_tp, m.n_fp, m.n_fn) == (1, 0, 0)
    m = match([], [G], 0.5)
    assert m.n_fn == 1 and m.n_tp == 0
    with pytest.raises(ValueError):
        match([], [G], 0.0)


def test_match_each_gt_at_most_once():
    m = match([(G, 0.9), (G, 0.8), (G.translated(0.2, 0), 0.7)], [G], 0.5)
    assert m.tp == [True, False, False]
    assert m.n_tp + m.n_fp == 3


def test_match_equals_reference_on_random_sets():
    gen = np.random.default_rng(0)
    for _ in range(30):
        gts = [BBox(gen.uniform(0, 60), gen.uniform(0, 60), gen.uniform(3, 15), gen.uniform(3, 15)) for _ in range(10)]
        dets = []
        for _ in range(30):
            g = gts[gen.integers(10)]
            jitter = gen.normal(0, 2, 4)
            dets.append((BBox(g.cx + jitter[0], g.cy + jitter[1], g.w * np.exp(0.2 * jitter[2]), g.h * np.exp(0.2 * jitter[3])), float(gen.random())))
        for thr in (0.3, 0.5, 0.75):
            m = match(dets, gts, thr)
            tps, which = match_reference(dets, gts, thr)
            assert m.tp == tps
            assert m.matched_gt == which


@pytest.mark.parametrize("tp,fp,fn,expected", [(5, 0, 0, (1.0, 1.0)), (1, 1, 0, (0.5, 1.0)), (0, 0, 3, (1.0, 0.0))])
def test_precision_recall(tp, fp, fn, expected):
    m = MatchResult([0.5] * (tp + fp), [True] * tp + [False] * fp, [0] * tp + [-1] * fp, [True] * tp + [False] * fn)
    assert precision_recall(m) == expected


def test_ap_hand_cases():
    assert average_precision([[(G, 0.9)]], [[G]]) == 1.0
    assert average_precision([[(G, 0.9), (FAR, 0.8)]], [[G]]) == 1.0
    assert average_precision([[(G, 0.9), (FAR, 0.8)]], [[G, BBox(40, 40, 4, 4)]]) == pytest.approx(51 / 101, abs=1e-15)
    assert average_precision([[]], [[]]) == -1.0


def _scene(gen, n_img=20):
    gts, dets, sizes = {}, {}, {}
    for i in range(n_img):
        k = f"img{i:02d}"
        sizes[k] = (256, 256)
        boxes = []
        for _ in range(gen.integers(0, 5)):
            s = gen.choice([gen.uniform(10, 31), gen.uniform(33, 90), gen.uniform(100, 130)])
            boxes.append(BBox(gen.uniform(70, 186), gen.uniform(70, 186), s * gen.uniform(0.8, 1.2), s * gen.uniform(0.8, 1.2)))
        gts[k] = boxes
        ds = []
        for b in boxes:
            if gen.random() < 0.85:
                j = gen.normal(0, 0.08, 4)
                ds.append((BBox(b.cx + j[0] * b.w, b.cy + j[1] * b.h, b.w * np.exp(j[2]), b.h * np.exp(j[3])), float(gen.random())))
        for _ in range(gen.integers(0, 3)):
            ds.append((BBox(gen.uniform(30, 220), gen.uniform(30, 220), gen.uniform(5, 60), gen.uniform(5, 60)), float(gen.random() * 0.6)))
        dets[k] = [(_inside(b, 256), s) for b, s in ds]
    return dets, gts, sizes


def _inside(b, size):
    x1, y1, x2, y2 = b.corners()
    if x1 >= 0 and y1 >= 0 and x2 <= size and y2 <= size:
        return b
    return BBox.from_corners(max(x1, 0), max(y1, 0), min(x2, size), min(y2, size))


@pytest.mark.parametrize("seed", range(5))
def test_coco_suite_matches_reference_evaluator(seed):
    dets, gts, sizes = _scene(np.random.default_rng(seed))
    areas = {k: [b.area for b in v] for k, v in gts.items()}
    rep = coco_suite(dets, gts, sizes)
    ref = [coco_reference(dets, gts, areas, thr=float(t)) for t in IOU_THRESHOLDS]
    assert rep.ap50 == pytest.approx(ref[0], abs=1e-9)
    assert rep.ap75 == pytest.approx(ref[5], abs=1e-9)
    assert rep.ap_50_95 == pytest.approx(np.mean(ref), abs=1e-9)
    for name, got in (("small", rep.ap_small), ("medium", rep.ap_medium), ("large", rep.ap_large)):
        lo, hi = AREA_RANGES[name]
        vals = [coco_reference(dets, gts, areas, lo, hi, float(t)) for t in IOU_THRESHOLDS]
        expect = -1.0 if vals[0] < 0 else float(np.mean(vals))
        assert got == pytest.approx(expect, abs=1e-9), name


def test_perfect_and_empty_detectors():
    dets, gts, sizes = _scene(np.random.default_rng(1))
    perfect = {k: [(b, 1.0) for b in v] for k, v in gts.items()}
    rep = coco_suite(perfect, gts, sizes)
    for v in (rep.ap50, rep.ap75, rep.ap_50_95, rep.precision, rep.recall):
        assert v == 1.0
    for v in (rep.ap_small, rep.ap_medium, rep.ap_large):
        assert v in (1.0, -1.0)
    rep = coco_suite({}, gts, sizes)
    assert rep.ap50 == 0.0 and rep.recall == 0.0 and rep.precision == 1.0


def test_size_partitions_need_image_sizes():
    dets, gts, sizes = _scene(np.random.default_rng(2), 3)
    with pytest.raises(ValueError):
        coco_suite(dets, gts, None)
    with pytest.raises(ValueError):
        coco_suite(dets, gts, {k: v for k, v in list(sizes.items())[1:]})
    assert coco_suite(dets, gts, None, size_partitions=False).ap_small == -1.0


def test_report_invariants_and_json_round_trip():
    dets, gts, sizes = _scene(np.random.default_rng(3))
    rep = coco_suite(dets, gts, sizes)
    assert rep.ap50 >= rep.ap_50_95
    aps = rep.ap_per_threshold
    assert all(a >= b - 1e-12 for a, b in zip(aps, aps[1:]))
    text = rep.to_json()
    keys = [line.split(":")[0].strip().strip('"') for line in text.splitlines() if line.startswith('  "')]
    assert keys[:8] == ["precision", "recall", "ap50", "ap75", "ap_50_95", "ap_small", "ap_medium", "ap_large"]
    assert EvalReport.from_json(text) == rep


def test_ap_invariant_to_input_order():
    dets, gts, sizes = _scene(np.random.default_rng(4))
    gen = np.random.default_rng(5)
    shuffled = {k: [v[i] for i in gen.permutation(len(v))] for k, v in dets.items()}
    assert average_precision(shuffled, gts) == average_precision(dets, gts)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_raising_tp_scores_never_lowers_ap(seed, bump):
    dets, gts, _ = _scene(np.random.default_rng(seed), 6)
    before = average_precision(dets, gts)
    raised = {}
    for k, ds in dets.items():
        m = match(ds, gts[k], 0.5)
        order = sorted(range(len(ds)), key=lambda i: (-ds[i][1], i))
        tp_idx = {order[r] for r, hit in enumerate(m.tp) if hit}
        raised[k] = [(b, min(1.0, s + bump) if i in tp_idx else s) for i, (b, s) in enumerate(ds)]
    after = average_precision(raised, gts)
    assert after >= before - 1e-12


def test_pr_curve_export(tmp_path):
    rep = EvalReport(1, 1, 1, 1, 1, 1, 1, 1, pr_curve=[(0.0, 1.0), (1.0, 0.5)])
    p = export_pr_curve(rep, tmp_path / "pr.csv")
    assert p.read_text().splitlines() == ["recall,precision", "0.0,1.0", "1.0,0.5"]
    first = p.read_bytes()
    export_pr_curve(rep, tmp_path / "pr.csv")
    assert p.read_bytes() == first
    with pytest.raises(ValueError):
        export_pr_curve(EvalReport(1, 1, 1, 1, 1, 1, 1, 1), tmp_path / "x.csv")


def test_pr_curve_area_matches_ap():
    dets, gts, sizes = _scene(np.random.default_rng(6))
    rep = coco_suite(dets, gts, sizes)
    rows = [tuple(map(float, line.split(","))) for line in pr_curve_csv(rep).splitlines()[1:]]
    r = np.array([x[0] for x in rows])
    p = np.array([x[1] for x in rows])
    assert np.all(np.diff(r) >= 0)
    area = float(np.sum(np.diff(r) * (p[1:] + p[:-1]) / 2))
    assert abs(area - rep.ap50) < 0.02
