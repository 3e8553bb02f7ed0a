from .blocks import CID, PPA, SPPF, C2fLite, CidConfig, PatchAware, PpaConfig
from .detector import Detector, DetectorConfig, decode_predictions, detection_loss, encode_box
from .module import CBL, CBR, BatchNorm2d, Conv2d, Linear, Module

__all__ = [
    "CBL",
    "CBR",
    "CID",
    "PPA",
    "SPPF",
    "BatchNorm2d",
    "C2fLite",
    "CidConfig",
    "Conv2d",
    "Detector",
    "DetectorConfig",
    "Linear",
    "Module",
    "PatchAware",
    "PpaConfig",
    "decode_predictions",
    "detection_loss",
    "encode_box",
]
