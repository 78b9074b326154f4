from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from segpipe.colorcodec import build_palette
from segpipe.formats import save_ade20k_annotation, save_coco_panoptic
from segpipe.manifest import ManifestHeader, ManifestWriter, Provenance, SampleRecord
from segpipe.maps import IGNORE, PanopticMap, SegmentInfo, SemanticMap


@pytest.fixture(scope="session")
def palette150():
    return build_palette(150, 32.0)


@pytest.fixture(scope="session")
def palette12():
    return build_palette(12, 32.0)


def random_semantic_map(rng: np.random.Generator, num_categories: int, max_side: int = 32,
                        p_ignore: float = 0.1) -> SemanticMap:
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    labels = rng.integers(0, num_categories, size=(h, w)).astype(np.int32)
    labels[rng.random((h, w)) < p_ignore] = IGNORE
    return SemanticMap(labels)


def random_panoptic_map(rng: np.random.Generator, num_categories: int, max_side: int = 32,
                        max_segments: int = 8, p_void: float = 0.1) -> PanopticMap:
    """Random segments laid out as nearest-site cells, with optional void blobs."""
    h = int(rng.integers(2, max_side + 1))
    w = int(rng.integers(2, max_side + 1))
    n_segments = int(rng.integers(1, max_segments + 1))
    sites = np.stack(
        np.unravel_index(rng.choice(h * w, size=n_segments, replace=False), (h, w)), axis=1
    )
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = (yy[..., None] - sites[:, 0]) ** 2 + (xx[..., None] - sites[:, 1]) ** 2
    ids = np.argmin(d2, axis=2).astype(np.int64) + 1

    if p_void > 0 and rng.random() < 0.7:
        ids[rng.random((h, w)) < p_void] = 0

    present = sorted(set(np.unique(ids).tolist()) - {0})
    segments = tuple(
        SegmentInfo(int(sid), int(rng.integers(0, num_categories)), bool(rng.integers(0, 2)))
        for sid in present
    )
    return PanopticMap(ids, segments)


def make_real_dataset(
    root: Path,
    n_samples: int = 5,
    num_categories: int = 150,
    size: int = 24,
    dataset: str = "ade20k",
    panoptic: bool = False,
    seed: int = 0,
) -> Path:
    """Write a tiny REAL dataset (images, masks, manifest.jsonl) under root."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    manifest_path = root / "manifest.jsonl"
    with ManifestWriter(manifest_path, ManifestHeader(dataset, num_categories)) as writer:
        for i in range(n_samples):
            pixels = rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8)
            buf = io.BytesIO()
            Image.fromarray(pixels, "RGB").save(buf, format="PNG")
            image_ref = f"images/real-{i:03d}.png"
            (root / image_ref).write_bytes(buf.getvalue())

            mask_ref = f"masks/real-{i:03d}.png"
            if panoptic:
                ids = np.ones((size, size), dtype=np.int64)
                ids[:, size // 2 :] = 2
                ids[: size // 3, : size // 3] = 0
                pmap = PanopticMap(
                    ids,
                    (
                        SegmentInfo(1, int(rng.integers(0, num_categories)), True),
                        SegmentInfo(2, int(rng.integers(0, num_categories)), False),
                    ),
                )
                png, segments_info = save_coco_panoptic(pmap)
                (root / mask_ref).write_bytes(png)
                (root / (mask_ref + ".segments.json")).write_text(json.dumps(segments_info))
            else:
                labels = rng.integers(0, min(num_categories, 149), size=(size, size)).astype(np.int32)
                labels[rng.random((size, size)) < 0.05] = IGNORE
                smap = SemanticMap(labels)
                (root / mask_ref).write_bytes(save_ade20k_annotation(smap))

            writer.append(
                SampleRecord(
                    sample_id=f"real-{i:03d}",
                    provenance=Provenance.REAL,
                    source_id=f"real-{i:03d}",
                    image_ref=image_ref,
                    mask_ref=mask_ref,
                    caption="",
                )
            )
    return manifest_path
