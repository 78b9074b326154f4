"""External annotation formats: ADE20K semantic PNGs and COCO panoptic PNGs.

ADE20K stores labels as 8-bit grayscale with 0 = unlabeled and v in
[1, 150] meaning category v-1. COCO panoptic stores segment ids packed
into RGB as id = R + 256*G + 256^2*B with id 0 = void, next to a
segments_info record list.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from segpipe.errors import FormatError, IdOverflow, LabelOutOfRange, UnknownSegment
from segpipe.maps import IGNORE, VOID, PanopticMap, SegmentInfo, SemanticMap, panoptic_to_semantic

ADE20K_NUM_CATEGORIES = 150
COCO_NUM_CATEGORIES = 133

__all__ = [
    "ADE20K_NUM_CATEGORIES",
    "COCO_NUM_CATEGORIES",
    "load_ade20k_annotation",
    "save_ade20k_annotation",
    "load_coco_panoptic",
    "save_coco_panoptic",
    "panoptic_to_semantic",
]


def _open_png(data: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise FormatError(f"cannot decode PNG payload: {exc}") from exc
    return img


def load_ade20k_annotation(png_bytes: bytes, num_categories: int = ADE20K_NUM_CATEGORIES) -> SemanticMap:
    """Parse an ADE20K-style grayscale annotation into a SemanticMap."""
    img = _open_png(png_bytes)
    if img.mode != "L":
        raise FormatError(f"expected single-channel 8-bit PNG, got mode {img.mode!r}")
    values = np.asarray(img, dtype=np.int32)
    if values.max(initial=0) > num_categories:
        raise LabelOutOfRange(
            f"annotation value {int(values.max())} exceeds {num_categories} categories"
        )
    labels = values - 1
    labels[values == 0] = IGNORE
    return SemanticMap(labels)


def save_ade20k_annotation(smap: SemanticMap) -> bytes:
    """Inverse of load_ade20k_annotation: label v stored as v+1, IGNORE as 0."""
    labels = smap.labels
    if labels.max(initial=0) > 254:
        raise FormatError("grayscale annotation format holds at most 255 categories")
    values = (labels + 1).astype(np.uint8)
    values[labels == IGNORE] = 0
    buf = io.BytesIO()
    Image.fromarray(values, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def load_coco_panoptic(png_bytes: bytes, segments_info: list[dict]) -> PanopticMap:
    """Parse a COCO panoptic PNG plus its segments_info records."""
    img = _open_png(png_bytes)
    if img.mode != "RGB":
        raise FormatError(f"expected 8-bit RGB PNG, got mode {img.mode!r}")
    rgb = np.asarray(img, dtype=np.int64)
    ids = rgb[..., 0] + 256 * rgb[..., 1] + 256 * 256 * rgb[..., 2]

    segments = []
    known = set()
    for rec in segments_info:
        seg_id = int(rec["id"])
        if seg_id in known:
            raise FormatError(f"segments_info lists id {seg_id} twice")
        known.add(seg_id)
        segments.append(SegmentInfo(seg_id, int(rec["category_id"]), bool(rec["isthing"])))

    present = set(np.unique(ids).tolist()) - {VOID}
    missing = present - known
    if missing:
        raise UnknownSegment(f"pixels reference segment ids absent from segments_info: {sorted(missing)}")
    uncovered = known - present
    if uncovered:
        raise FormatError(f"segments_info lists segments covering no pixels: {sorted(uncovered)}")
    return PanopticMap(ids, tuple(segments))


def save_coco_panoptic(pmap: PanopticMap) -> tuple[bytes, list[dict]]:
    """Inverse of load_coco_panoptic; raises IdOverflow above 24 bits."""
    ids = pmap.segment_ids
    if ids.max(initial=0) >= 256**3:
        raise IdOverflow(f"segment id {int(ids.max())} does not fit 24-bit RGB encoding")
    rgb = np.empty(ids.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = ids % 256
    rgb[..., 1] = (ids // 256) % 256
    rgb[..., 2] = ids // (256 * 256)
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    records = [
        {"id": s.segment_id, "category_id": s.category, "isthing": s.isthing}
        for s in pmap.segments
    ]
    return buf.getvalue(), records
