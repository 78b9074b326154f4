"""Core raster types: semantic maps, panoptic maps, and RGB color maps.

Labels are dense numpy rasters. Unannotated pixels carry the IGNORE
sentinel in semantic maps and the VOID segment id in panoptic maps;
both serialize as 0 in their external formats but stay distinct here.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

IGNORE = -1  # semantic label of an unannotated pixel
VOID = 0  # panoptic segment id of unannotated pixels


@dataclass(eq=False)
class SemanticMap:
    """Per-pixel category indices, shape (H, W), IGNORE where unannotated."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2 or labels.shape[0] < 1 or labels.shape[1] < 1:
            raise ValueError(f"labels must be a non-empty 2-D array, got shape {labels.shape}")
        if labels.min(initial=0) < IGNORE:
            raise ValueError("labels below the IGNORE sentinel are not valid")
        self.labels = labels

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class SegmentInfo:
    segment_id: int
    category: int
    isthing: bool


@dataclass(eq=False)
class PanopticMap:
    """Per-pixel segment ids, shape (H, W), plus the segment table.

    Every non-VOID pixel id must appear exactly once in `segments`, and
    every listed segment must cover at least one pixel.
    """

    segment_ids: np.ndarray
    segments: tuple[SegmentInfo, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        ids = np.asarray(self.segment_ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[0] < 1 or ids.shape[1] < 1:
            raise ValueError(f"segment_ids must be a non-empty 2-D array, got shape {ids.shape}")
        if ids.min(initial=0) < 0:
            raise ValueError("segment ids must be non-negative")
        self.segment_ids = ids
        self.segments = tuple(self.segments)

        listed = [s.segment_id for s in self.segments]
        if len(set(listed)) != len(listed):
            raise ValueError("segment ids in the segment table must be unique")
        present = set(np.unique(ids).tolist()) - {VOID}
        if present - set(listed):
            raise ValueError(f"pixels reference unlisted segment ids: {sorted(present - set(listed))}")
        if set(listed) - present:
            raise ValueError(f"listed segments cover no pixels: {sorted(set(listed) - present)}")

    @property
    def height(self) -> int:
        return self.segment_ids.shape[0]

    @property
    def width(self) -> int:
        return self.segment_ids.shape[1]

    def category_of(self) -> dict[int, int]:
        return {s.segment_id: s.category for s in self.segments}


@dataclass(eq=False)
class ColorMap:
    """H x W x 3 uint8 RGB raster."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ValueError(f"pixels must have shape (H, W, 3), got {pixels.shape}")
        if pixels.dtype != np.uint8:
            if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
                raise ValueError("pixel channels must lie in [0, 255]")
            pixels = pixels.astype(np.uint8)
        self.pixels = pixels

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "ColorMap":
        img = Image.open(io.BytesIO(data))
        if img.mode != "RGB":
            img = img.convert("RGB")
        return cls(np.asarray(img))


def panoptic_to_semantic(pmap: PanopticMap) -> SemanticMap:
    """Per-pixel category of the covering segment; VOID becomes IGNORE."""
    ids = pmap.segment_ids
    if not pmap.segments:
        return SemanticMap(np.full(ids.shape, IGNORE, dtype=np.int32))
    table_ids = np.array([s.segment_id for s in pmap.segments], dtype=np.int64)
    table_cats = np.array([s.category for s in pmap.segments], dtype=np.int32)
    order = np.argsort(table_ids)
    table_ids, table_cats = table_ids[order], table_cats[order]

    labels = np.full(ids.shape, IGNORE, dtype=np.int32)
    covered = ids != VOID
    idx = np.searchsorted(table_ids, ids[covered])
    labels[covered] = table_cats[idx]
    return SemanticMap(labels)
