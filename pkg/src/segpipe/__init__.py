"""Segmentation data synthesis pipeline: mask/color codecs, generation
orchestration over pluggable backends, training-feed sampling, and metrics."""

__version__ = "0.1.0"

from segpipe.maps import IGNORE, VOID, ColorMap, PanopticMap, SegmentInfo, SemanticMap
from segpipe.colorcodec import (
    Palette,
    build_palette,
    decode_semantic,
    encode_panoptic,
    encode_semantic,
    to_binary_masks,
)

__all__ = [
    "IGNORE",
    "VOID",
    "ColorMap",
    "PanopticMap",
    "SegmentInfo",
    "SemanticMap",
    "Palette",
    "build_palette",
    "decode_semantic",
    "encode_panoptic",
    "encode_semantic",
    "to_binary_masks",
    "__version__",
]
