import csv
import json

import numpy as np
import pytest

from sardet.boxes import BBox
from sardet.config import (
    ConfigError,
    RunConfig,
    config_hash,
    desk_preset,
    diff,
    load_config,
    full_scale_preset,
    parse_config,
)
from sardet.nn import Detector
from sardet.rng import Rng
from sardet.tensor import Tensor
from sardet.tensor import io as tio
from sardet.train import (
    SGD,
    HashMismatch,
    ModelEMA,
    TrainingError,
    build_data,
    dihedral,
    load_checkpoint,
    resolve_c,
    train,
)


def tiny(**over) -> RunConfig:
    """A few-second configuration: 8 training images, a narrow network."""
    base = desk_preset(
        run={"epochs": 1, "batch_size": 4, "eval_every": 1},
        data={"n_train": 8, "n_test": 4},
        model={"embed_channels": 4, "stem_width": 4, "backbone_widths": (4, 6, 8, 8), "head_width": 8, "ppa_ca_reduction": 4},
    )
    return base.with_overrides(**over) if over else base


def loss_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config_hash ")
    return list(csv.reader(lines[1:]))


# -- config -------------------------------------------------------------------------

def test_desk_preset_values():
    cfg = desk_preset()
    assert (cfg.data.input_size, cfg.data.n_train, cfg.data.n_test) == (64, 200, 50)
    assert (cfg.run.epochs, cfg.run.batch_size) == (60, 8)
    assert (cfg.optimizer.lr, cfg.optimizer.momentum, cfg.optimizer.name) == (0.01, 0.937, "sgd")
    assert cfg.model.enable_cid and cfg.model.enable_ppa and cfg.loss.kind == "nwd"
    assert cfg.loss.c == "auto" and cfg.run.augment and cfg.run.ema_decay > 0


def test_full_scale_preset_values():
    cfg = full_scale_preset()
    assert (cfg.data.input_size, cfg.run.epochs, cfg.optimizer.lr) == (640, 200, 0.01)
    assert cfg.data.kind == "coco"
    assert cfg.loss.c == "12.8" and not cfg.run.augment


def test_config_text_round_trip_and_hash(tmp_path):
    cfg = desk_preset(loss={"kind": "giou", "c": "auto"}, model={"backbone_widths": (8, 8, 16, 16)})
    text = cfg.to_text()
    again = parse_config(text)
    assert again == cfg
    assert again.to_text() == text
    assert cfg.hash() == config_hash(text)
    (tmp_path / "c.ini").write_text(text)
    assert load_config(tmp_path / "c.ini").hash() == cfg.hash()
    assert desk_preset().hash() != cfg.hash()


def test_documented_schema_is_the_desk_preset():
    import re
    from pathlib import Path

    readme = (Path(__file__).parents[1] / "README.md").read_text()
    block = re.search(r"```ini\n(.*?)```", readme, re.S).group(1)
    assert parse_config(block) == desk_preset()


def test_partial_config_fills_defaults():
    cfg = parse_config("[run]\nseed = 5\n")
    assert cfg.run.seed == 5 and cfg.optimizer.lr == 0.01


@pytest.mark.parametrize(
    "text",
    [
        "[run]\nsede = 5\n",
        "[runs]\nseed = 5\n",
        "[run]\nseed = five\n",
        "[run]\naugment = maybe\n",
        "[optimizer]\nlr = 0\n",
        "[run]\nepochs = 0\n",
        "[data]\ninput_size = 48\n",
        "[loss]\nkind = ciou\n",
        "[loss]\nc = -1\n",
        "[loss]\nc = big\n",
        "no section header\n",
    ],
)
def test_invalid_configs_fail_loudly(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_diff_lists_only_changed_fields():
    a = desk_preset()
    b = a.with_overrides(loss={"kind": "diou"})
    assert diff(a, b) == [("loss.kind", "nwd", "diou")]
    with pytest.raises(ConfigError):
        a.with_overrides(lossy={"kind": "diou"})


def test_resolve_c_auto_is_mean_side_in_network_pixels():
    cfg = tiny()
    train_split = build_data(cfg)["train"]
    sides = [np.sqrt(b.w * b.h) for i in range(len(train_split)) for b in train_split.net_boxes(i)]
    assert resolve_c(cfg, train_split) == pytest.approx(np.mean(sides), rel=1e-15)
    assert resolve_c(tiny(loss={"c": "12.8"}), train_split) == 12.8
    with pytest.raises(ConfigError):
        cfg.detector_config()


# -- optimizer and weight averaging -----------------------------------------------------

def test_sgd_step_matches_closed_form():
    w = Tensor(np.array([[1.0, -2.0]]), True)
    b = Tensor(np.array([0.5]), True)
    opt = SGD([("w", w), ("b", b)], lr=0.1, momentum=0.9, weight_decay=0.01)
    for _ in range(2):
        w.grad = np.array([[0.2, 0.4]])
        b.grad = np.array([1.0])
        opt.step()
    # w: v1 = g + wd*w0; w1 = w0 - lr*v1; v2 = 0.9*v1 + g + wd*w1
    w0 = np.array([[1.0, -2.0]])
    v1 = np.array([[0.2, 0.4]]) + 0.01 * w0
    w1 = w0 - 0.1 * v1
    v2 = 0.9 * v1 + np.array([[0.2, 0.4]]) + 0.01 * w1
    np.testing.assert_allclose(w.data, w1 - 0.1 * v2, rtol=1e-15)
    # biases are not decayed
    np.testing.assert_allclose(b.data, [0.5 - 0.1 * 1.0 - 0.1 * 1.9], rtol=1e-15)


def test_model_ema_closed_form():
    m = Detector(Rng(0), tiny().detector_config(12.8))
    name, p = next(iter(m.named_parameters()))
    start = p.data.copy()
    ema = ModelEMA(m, decay=0.5, tau=1.0)
    p.data += 1.0
    ema.update(m)
    d = 0.5 * (1 - np.exp(-1.0))
    np.testing.assert_allclose(ema.state[f"param/{name}"], d * start + (1 - d) * (start + 1.0), rtol=1e-14)


# -- augmentation -------------------------------------------------------------------------

@pytest.mark.parametrize("k", range(8))
def test_dihedral_keeps_boxes_on_their_pixels(k):
    S = 32
    img = np.zeros((1, S, S))
    boxes = [BBox(6.0, 11.0, 4.0, 10.0), BBox(22.0, 25.0, 8.0, 2.0)]
    for b in boxes:
        x1, y1, x2, y2 = (int(v) for v in b.corners())
        img[0, y1:y2, x1:x2] = 1.0
    out, moved = dihedral(img, boxes, k)
    mask = np.zeros((S, S))
    for b in moved:
        x1, y1, x2, y2 = (int(round(v)) for v in b.corners())
        mask[y1:y2, x1:x2] = 1.0
    assert np.array_equal(out[0], mask)


def test_dihedral_elements_are_distinct():
    img = np.arange(16.0).reshape(1, 4, 4)
    outs = {dihedral(img, [], k)[0].tobytes() for k in range(8)}
    assert len(outs) == 8


# -- training loop -------------------------------------------------------------------------

def test_one_epoch_smoke(tmp_path):
    rec = train(tiny(), tmp_path)
    rows = loss_rows(tmp_path / "loss.csv")
    assert rows[0] == ["epoch", "step", "total", "box", "obj"]
    assert [r[:2] for r in rows[1:]] == [["1", "0"], ["1", "1"]]
    assert (tmp_path / "last" / "manifest.txt").exists()
    assert rec.report is not None and rec.config_hash == tiny().hash()
    doc = json.loads((tmp_path / "run_record.json").read_text())
    assert doc["config_hash"] == rec.config_hash
    assert (tmp_path / "config.ini").read_text() == tiny().to_text()


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny()
    train(cfg, tmp_path)
    ck = load_checkpoint(tmp_path / "last", expect_hash=cfg.hash())
    assert ck.epoch == 1 and ck.cfg == cfg and ck.c == resolve_c(cfg, build_data(cfg)["train"])
    assert set(ck.momentum) == {n for n, _ in ck.model().named_parameters()}
    assert set(ck.ema) == set(ck.state)
    raw = ck.model(averaged=False).state_dict()
    assert all(np.array_equal(raw[k], ck.state[k]) for k in raw)


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = tiny(run={"epochs": 3, "batch_size": 4, "eval_every": 2}, data={"n_train": 12, "n_test": 4})
    train(cfg, tmp_path / "full")
    train(cfg, tmp_path / "part", stop_after=1)
    train(cfg, tmp_path / "part", resume=tmp_path / "part" / "last")
    a = loss_rows(tmp_path / "full" / "loss.csv")
    b = loss_rows(tmp_path / "part" / "loss.csv")
    assert [r[:2] for r in a] == [r[:2] for r in b] and len(a) == 10
    diffs = [abs(float(x) - float(y)) for ra, rb in zip(a[1:], b[1:]) for x, y in zip(ra[2:], rb[2:])]
    assert max(diffs) <= 1e-9
    assert (tmp_path / "full" / "last" / "tensors.bin").read_bytes() == (tmp_path / "part" / "last" / "tensors.bin").read_bytes()


def test_identical_runs_are_byte_identical(tmp_path):
    cfg = tiny(run={"epochs": 2, "batch_size": 4, "eval_every": 1, "augment": True})
    for name in ("a", "b"):
        train(cfg, tmp_path / name)
    for f in ("loss.csv", "last/tensors.bin", "last/manifest.txt", "best/tensors.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    other = cfg.with_overrides(run={"seed": 1})
    train(other, tmp_path / "c")
    assert (tmp_path / "a" / "loss.csv").read_bytes() != (tmp_path / "c" / "loss.csv").read_bytes()


def test_hash_mismatch_is_refused(tmp_path):
    cfg = tiny()
    train(cfg, tmp_path)
    with pytest.raises(HashMismatch, match="retrain"):
        load_checkpoint(tmp_path / "last", expect_hash=tiny(run={"seed": 3}).hash())
    with pytest.raises(HashMismatch):
        train(tiny(run={"seed": 3}), tmp_path, resume=tmp_path / "last")
    ini = tmp_path / "last" / "config.ini"
    ini.write_text(ini.read_text().replace("seed = 0", "seed = 9", 1))
    with pytest.raises(HashMismatch):
        load_checkpoint(tmp_path / "last")


def test_nan_loss_dumps_the_batch(tmp_path):
    cfg = tiny(run={"epochs": 1, "batch_size": 4, "augment": False})
    data = build_data(cfg)
    data["train"].images[5, :, 10, 10] = np.nan
    with pytest.raises(TrainingError, match="dumped"):
        train(cfg, tmp_path, data=data)
    (dump,) = tmp_path.glob("nan_batch_e*_s*")
    doc = json.loads((dump / "batch.json").read_text())
    assert "000005" in doc["image_ids"]
    assert len(doc["image_ids"]) == len(doc["targets"]) == 4
    assert np.isnan(tio.load(dump / "images.bin")).any()


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning", "ignore:invalid value encountered:RuntimeWarning")
def test_divergence_during_validation_is_a_training_error(tmp_path):
    with pytest.raises(TrainingError, match="diverged"):
        train(tiny(optimizer={"lr": 1e12}), tmp_path)
