from .annotations import Annotation, AnnotationError, parse_coco, parse_voc, write_coco, write_voc
from .dataset import Split, load_synthetic, save_synthetic, synthetic_dataset
from .letterbox import LetterboxInfo, letterbox
from .synth import SynthConfig, generate_scene, size_class

__all__ = [
    "Annotation",
    "AnnotationError",
    "LetterboxInfo",
    "Split",
    "SynthConfig",
    "generate_scene",
    "letterbox",
    "load_synthetic",
    "parse_coco",
    "parse_voc",
    "save_synthetic",
    "size_class",
    "synthetic_dataset",
    "write_coco",
    "write_voc",
]
