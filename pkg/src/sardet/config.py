"""Run configuration: dataclass sections serialized as INI text.

Every field has a default, unknown sections or keys are errors, and the
config hash is the SHA-256 of the canonical text written by ``to_text``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .boxes import LossKind
from .data.synth import SynthConfig
from .nn.blocks import CidConfig
from .nn.detector import DetectorConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    epochs: int = 60
    batch_size: int = 8
    eval_every: int = 10  # epochs between validation passes for the best checkpoint
    augment: bool = True  # random flips / transposes (the 8 symmetries of the square)
    ema_decay: float = 0.99  # weight averaging for evaluation and checkpoints; 0 disables
    ema_tau: float = 100.0  # ramp length of the averaging decay, in optimizer steps
    out_dir: str = "runs/desk"


@dataclass
class OptimizerSection:
    name: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.937
    weight_decay: float = 5e-4
    nesterov: bool = False


@dataclass
class LossSection:
    kind: str = "nwd"
    c: str = "auto"  # a number, or "auto" for the mean sqrt(wh) of training boxes
    obj_weight: float = 1.0
    scale_by_batch: bool = True  # backprop batch_size * mean loss, as YOLOv8 does


@dataclass
class ModelSection:
    embed_channels: int = 8
    dw_kernel: int = 7
    mlp_ratio: int = 2
    cid_output: str = "shortest_path"
    exact_gelu: bool = False
    stem_width: int = 16
    backbone_widths: tuple = (16, 24, 32, 48)
    head_width: int = 24
    n_bottlenecks: int = 1
    enable_cid: bool = True
    enable_ppa: bool = True
    ppa_token_ratio: float = 1.0
    ppa_channel_ratio: float = 1.0
    ppa_dropout: float = 0.1
    ppa_ca_reduction: int = 8
    ppa_sa_kernel: int = 7


@dataclass
class DataSection:
    kind: str = "synthetic"  # synthetic | synthetic_dir | voc | coco
    input_size: int = 64
    n_train: int = 200
    n_test: int = 50
    synth_seed: int = 0
    nominal_size: int = 256
    ships_min: int = 1
    ships_max: int = 4
    speckle_looks: float = 4.0
    clutter_level: float = 0.15
    path: str = ""  # dataset root for the directory kinds
    train_annotations: str = "train.json"  # coco only
    test_annotations: str = "test.json"
    image_dir: str = "images"


@dataclass
class NmsSection:
    iou_threshold: float = 0.45
    score_threshold: float = 0.25
    eval_score_threshold: float = 0.001  # detections kept for AP computation


SECTIONS = {
    "run": RunSection,
    "optimizer": OptimizerSection,
    "loss": LossSection,
    "model": ModelSection,
    "data": DataSection,
    "nms": NmsSection,
}


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    loss: LossSection = field(default_factory=LossSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    nms: NmsSection = field(default_factory=NmsSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.optimizer.lr <= 0:
            raise ConfigError("optimizer.lr must be > 0")
        if not 0 <= self.optimizer.momentum < 1:
            raise ConfigError("optimizer.momentum must lie in [0, 1)")
        if self.optimizer.name != "sgd":
            raise ConfigError(f"unknown optimizer {self.optimizer.name!r}")
        if self.run.epochs < 1:
            raise ConfigError("run.epochs must be >= 1")
        if not 0 <= self.run.ema_decay < 1 or self.run.ema_tau <= 0:
            raise ConfigError("run.ema_decay must lie in [0, 1) and run.ema_tau must be > 0")
        if self.run.batch_size < 1:
            raise ConfigError("run.batch_size must be >= 1")
        if self.data.input_size <= 0 or self.data.input_size % 32:
            raise ConfigError("data.input_size must be a positive multiple of 32")
        if self.data.kind not in ("synthetic", "synthetic_dir", "voc", "coco"):
            raise ConfigError(f"unknown data.kind {self.data.kind!r}")
        if self.loss.kind not in ("nwd", "iou", "giou", "diou"):
            raise ConfigError(f"unknown loss.kind {self.loss.kind!r}")
        if self.loss.c != "auto":
            try:
                c = float(self.loss.c)
            except ValueError:
                raise ConfigError(f"loss.c must be a number or 'auto', got {self.loss.c!r}") from None
            if not c > 0:
                raise ConfigError("loss.c must be > 0")

    # -- derived objects -------------------------------------------------

    def synth_config(self) -> SynthConfig:
        d = self.data
        return SynthConfig(
            image_size=d.input_size,
            nominal_size=d.nominal_size,
            ships_per_image=(d.ships_min, d.ships_max),
            speckle_looks=d.speckle_looks,
            clutter_level=d.clutter_level,
            seed=d.synth_seed,
        )

    def detector_config(self, c: float | None = None) -> DetectorConfig:
        m = self.model
        if c is None:
            if self.loss.c == "auto":
                raise ConfigError("loss.c is 'auto'; resolve it from the training set first")
            c = float(self.loss.c)
        return DetectorConfig(
            cid=CidConfig(
                embed_channels=m.embed_channels,
                dw_kernel=m.dw_kernel,
                mlp_ratio=m.mlp_ratio,
                output_mode=m.cid_output,
                exact_gelu=m.exact_gelu,
            ),
            stem_width=m.stem_width,
            backbone_widths=tuple(m.backbone_widths),
            head_width=m.head_width,
            n_bottlenecks=m.n_bottlenecks,
            enable_cid=m.enable_cid,
            enable_ppa=m.enable_ppa,
            ppa_token_ratio=m.ppa_token_ratio,
            ppa_channel_ratio=m.ppa_channel_ratio,
            ppa_dropout=m.ppa_dropout,
            ppa_ca_reduction=m.ppa_ca_reduction,
            ppa_sa_kernel=m.ppa_sa_kernel,
            loss=LossKind(self.loss.kind, c),
            obj_weight=self.loss.obj_weight,
        )

    # -- text form -------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            sec = getattr(self, name)
            for f in fields(sec):
                lines.append(f"{f.name} = {_fmt(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        return config_hash(self.to_text())

    def with_overrides(self, **sections) -> "RunConfig":
        """``cfg.with_overrides(loss={"kind": "giou"})``."""
        kw = {}
        for name, changes in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section {name!r}")
            kw[name] = replace(getattr(self, name), **changes)
        return replace(self, **kw)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(value)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(int(x) for x in value.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
    return value.strip()


def parse_config(text: str) -> RunConfig:
    # "#" after whitespace starts a comment, so documented examples can be pasted as-is
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__", inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    kw = {}
    for name, cls in SECTIONS.items():
        defaults = cls()
        known = {f.name for f in fields(cls)}
        vals = {}
        if cp.has_section(name):
            for key, value in cp.items(name):
                if key not in known:
                    raise ConfigError(f"unknown key {name}.{key}")
                vals[key] = _parse(value, getattr(defaults, key), f"{name}.{key}")
        kw[name] = cls(**vals)
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def desk_preset(**overrides) -> RunConfig:
    """64 px inputs, 200/50 synthetic images, 60 epochs, batch 8, SGD lr 0.01.

    These are the dataclass defaults, so a partial config file is read as
    overrides of this preset.
    """
    return RunConfig().with_overrides(**overrides) if overrides else RunConfig()


def full_scale_preset() -> RunConfig:
    """Full-scale reference settings (640 px, 200 epochs, batch 64); not run here."""
    return RunConfig(
        run=RunSection(epochs=200, batch_size=64, augment=False, out_dir="runs/full"),
        loss=LossSection(c="12.8"),
        model=ModelSection(
            embed_channels=64, mlp_ratio=4, stem_width=16, backbone_widths=(32, 64, 128, 256), head_width=64
        ),
        data=DataSection(kind="coco", input_size=640, nominal_size=640),
    )


def diff(a: RunConfig, b: RunConfig) -> list[tuple[str, object, object]]:
    """Fields that differ, as (section.key, a_value, b_value)."""
    out = []
    for name in SECTIONS:
        sa, sb = getattr(a, name), getattr(b, name)
        for f in dataclasses.fields(sa):
            va, vb = getattr(sa, f.name), getattr(sb, f.name)
            if va != vb:
                out.append((f"{name}.{f.name}", va, vb))
    return out
