"""MaskSyn and ImgSyn orchestration over manifests.

MaskSyn turns a real sample into brand-new (mask, image) pairs: caption
the real image, sample a color map from the caption, project it to a
segmentation mask, then condition image generation on the quantized
re-encoding of that mask so the stored label and the conditioning map
are codec-consistent by construction. ImgSyn keeps the human-annotated
mask and only resamples images aligned to it.

Batches are resumable (deterministic sample ids, content-addressed
payloads) and their outputs are bitwise independent of worker count:
results are appended in input order regardless of scheduling.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from segpipe.backend.protocol import (
    DEFAULT_RESOLUTION,
    MASK2IMG_STEPS,
    TEXT2MASK_STEPS,
    GeneratorBackend,
    caption,
    mask2img,
    text2mask,
)
from segpipe.colorcodec import DEFAULT_EDGE_WIDTH, Palette, decode_semantic, encode_panoptic, encode_semantic
from segpipe.errors import BackendError, SchemaError, SegPipeError
from segpipe.formats import load_ade20k_annotation, load_coco_panoptic, save_ade20k_annotation
from segpipe.manifest import (
    GeneratorMeta,
    ManifestHeader,
    ManifestWriter,
    Provenance,
    SampleRecord,
    manifest_scan,
    read_header,
)
from segpipe.maps import IGNORE, SemanticMap
from segpipe.seeds import derive_seed

JOB_CONFIG_SCHEMA_VERSION = 1

# A decoded MaskSyn mask is degenerate when it collapses to one category
# or any present category covers less than this fraction of pixels.
MIN_CATEGORY_FRACTION = 0.001

ReadRef = Callable[[str], bytes]


@dataclass
class JobConfig:
    """Versioned description of one generation batch."""

    mode: str  # "masksyn" | "imgsyn"
    count: int  # generations per real sample
    job_seed: int
    output_root: Path
    data_root: Path
    parallelism: int = 1
    task: str = "semantic"  # conditioning for imgsyn: "semantic" | "panoptic"
    resolution: int = DEFAULT_RESOLUTION
    edge_width: int = DEFAULT_EDGE_WIDTH
    schema_version: int = JOB_CONFIG_SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.mode not in ("masksyn", "imgsyn"):
            raise ValueError(f"mode must be masksyn or imgsyn, got {self.mode!r}")
        if self.task not in ("semantic", "panoptic"):
            raise ValueError(f"task must be semantic or panoptic, got {self.task!r}")
        if self.count < 0:
            raise ValueError(f"count must be >= 0, got {self.count}")
        if self.parallelism < 1:
            raise ValueError(f"parallelism must be >= 1, got {self.parallelism}")
        self.output_root = Path(self.output_root)
        self.data_root = Path(self.data_root)

    def to_json(self) -> str:
        doc = {
            "schema_version": self.schema_version,
            "mode": self.mode,
            "count": self.count,
            "job_seed": self.job_seed,
            "output_root": str(self.output_root),
            "data_root": str(self.data_root),
            "parallelism": self.parallelism,
            "task": self.task,
            "resolution": self.resolution,
            "edge_width": self.edge_width,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "JobConfig":
        doc = json.loads(text)
        version = doc.get("schema_version")
        if version != JOB_CONFIG_SCHEMA_VERSION:
            raise SchemaError(f"unsupported job config schema_version: {version!r}")
        doc = dict(doc)
        doc["output_root"] = Path(doc["output_root"])
        doc["data_root"] = Path(doc["data_root"])
        return cls(**doc)


class PayloadStore:
    """Content-addressed PNG storage under output_root/{images,masks}.

    Thread-safe: identical content races to identical files via atomic
    replace, and the in-memory known set only short-circuits re-stats.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "images").mkdir(parents=True, exist_ok=True)
        (self.root / "masks").mkdir(parents=True, exist_ok=True)
        self._known: set[str] = set()

    def put_image(self, data: bytes) -> str:
        return self._put("images", data)

    def put_mask(self, data: bytes) -> str:
        return self._put("masks", data)

    def put_sidecar(self, ref: str, text: str) -> str:
        sidecar = ref + ".segments.json"
        path = self.root / sidecar
        if not path.exists():
            path.write_text(text, encoding="utf-8")
        return sidecar

    def _put(self, kind: str, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        ref = f"{kind}/{digest}.png"
        if ref in self._known:
            return ref
        path = self.root / ref
        if not path.exists():
            tmp = path.with_name(f".{digest}.{os.getpid()}.{threading.get_ident():x}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)  # atomic; concurrent writers race to identical content
        self._known.add(ref)
        return ref

    def read(self, ref: str) -> bytes:
        return (self.root / ref).read_bytes()


def item_seed(job_seed: int, sample_id: str, index: int) -> int:
    return derive_seed("segpipe.item", job_seed, sample_id, index)


def _caption_prologue(image_ref: str, backend: GeneratorBackend, read_ref: ReadRef) -> str:
    return caption(backend, read_ref(image_ref))


def _conditioning_prologue(
    mask_ref: str,
    backend_unused,
    palette: Palette,
    read_ref: ReadRef,
    task: str,
    edge_width: int,
    num_categories: int | None,
) -> tuple[bytes, int]:
    """(conditioning PNG, width) for one human-labeled mask."""
    mask_bytes = read_ref(mask_ref)
    if task == "panoptic":
        segments_info = json.loads(read_ref(mask_ref + ".segments.json"))
        pmap = load_coco_panoptic(mask_bytes, segments_info)
        conditioning = encode_panoptic(pmap, palette, edge_width=edge_width)
    else:
        smap = load_ade20k_annotation(mask_bytes, num_categories or palette.num_categories)
        conditioning = encode_semantic(smap, palette)
    return conditioning.to_png_bytes(), conditioning.width


def _iter_masksyn(
    real: SampleRecord,
    indices,
    backend: GeneratorBackend,
    palette: Palette,
    store: PayloadStore,
    read_ref: ReadRef,
    job_seed: int,
    resolution: int,
    caption_fn=None,
):
    """Per-item MaskSyn outcomes; the caption (one per real sample) raises."""
    caption_fn = caption_fn or _caption_prologue
    prompt = caption_fn(real.image_ref, backend, read_ref)
    for i in indices:
        try:
            seed = item_seed(job_seed, real.sample_id, i)
            cmap = text2mask(backend, prompt, 1, seed, resolution=resolution)[0]
            mask = decode_semantic(cmap, palette)
            degenerate = _is_degenerate(mask)
            if degenerate:
                seed = derive_seed("segpipe.retry", job_seed, real.sample_id, i)
                cmap = text2mask(backend, prompt, 1, seed, resolution=resolution)[0]
                mask = decode_semantic(cmap, palette)
                degenerate = _is_degenerate(mask)

            conditioning = encode_semantic(mask, palette)
            image_png = mask2img(backend, prompt, conditioning.to_png_bytes(), 1, seed)[0]
            record = SampleRecord(
                sample_id=_syn_id(real.sample_id, "masksyn", i),
                provenance=Provenance.MASKSYN,
                source_id=real.sample_id,
                image_ref=store.put_image(image_png),
                mask_ref=store.put_mask(save_ade20k_annotation(mask)),
                caption=prompt,
                generator_meta=GeneratorMeta(
                    backend=backend.name,
                    version=backend.version,
                    seed=seed,
                    steps={"text2mask": TEXT2MASK_STEPS, "mask2img": MASK2IMG_STEPS},
                    resolution=resolution,
                    degenerate=degenerate,
                ),
            )
        except (BackendError, OSError, SegPipeError) as exc:
            yield i, exc
            continue
        yield i, record


def _iter_imgsyn(
    real: SampleRecord,
    indices,
    backend: GeneratorBackend,
    palette: Palette,
    store: PayloadStore,
    read_ref: ReadRef,
    job_seed: int,
    task: str,
    edge_width: int,
    num_categories: int | None,
    caption_fn=None,
    conditioning_fn=None,
):
    """Per-item ImgSyn outcomes; mask load + caption (once per sample) raise."""
    caption_fn = caption_fn or _caption_prologue
    conditioning_fn = conditioning_fn or _conditioning_prologue
    conditioning_png, width = conditioning_fn(
        real.mask_ref, backend, palette, read_ref, task, edge_width, num_categories
    )
    prompt = caption_fn(real.image_ref, backend, read_ref)

    for i in indices:
        try:
            seed = item_seed(job_seed, real.sample_id, i)
            image_png = mask2img(backend, prompt, conditioning_png, 1, seed)[0]
            record = SampleRecord(
                sample_id=_syn_id(real.sample_id, "imgsyn", i),
                provenance=Provenance.IMGSYN,
                source_id=real.sample_id,
                image_ref=store.put_image(image_png),
                mask_ref=real.mask_ref,  # the original human-labeled mask
                caption=prompt,
                generator_meta=GeneratorMeta(
                    backend=backend.name,
                    version=backend.version,
                    seed=seed,
                    steps={"mask2img": MASK2IMG_STEPS},
                    resolution=width,
                ),
            )
        except (BackendError, OSError, SegPipeError) as exc:
            yield i, exc
            continue
        yield i, record


def masksyn(
    real: SampleRecord,
    k: int,
    backend: GeneratorBackend,
    palette: Palette,
    store: PayloadStore,
    read_ref: ReadRef,
    job_seed: int = 0,
    resolution: int = DEFAULT_RESOLUTION,
) -> list[SampleRecord]:
    """Generate k novel (mask, image) samples from one real record."""
    if real.provenance is not Provenance.REAL:
        raise ValueError(f"masksyn requires a REAL source record, got {real.provenance.value}")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k == 0:
        return []
    return _collect(
        _iter_masksyn(real, range(k), backend, palette, store, read_ref, job_seed, resolution)
    )


def imgsyn(
    real: SampleRecord,
    n: int,
    backend: GeneratorBackend,
    palette: Palette,
    store: PayloadStore,
    read_ref: ReadRef,
    job_seed: int = 0,
    task: str = "semantic",
    edge_width: int = DEFAULT_EDGE_WIDTH,
    num_categories: int | None = None,
) -> list[SampleRecord]:
    """Generate n new images aligned to one real record's human mask."""
    if real.provenance is not Provenance.REAL:
        raise ValueError(f"imgsyn requires a REAL source record, got {real.provenance.value}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if n == 0:
        return []
    return _collect(
        _iter_imgsyn(
            real, range(n), backend, palette, store, read_ref, job_seed, task, edge_width, num_categories
        )
    )


def _collect(outcomes) -> list[SampleRecord]:
    records = []
    for _, outcome in outcomes:
        if isinstance(outcome, Exception):
            raise outcome
        records.append(outcome)
    return records


@dataclass
class BatchResult:
    output_manifest: Path
    failure_ledger: Path
    records_written: int
    failures: int
    skipped: int


@dataclass
class _ItemFailure:
    sample_id: str
    source_id: str
    stage: str
    error_type: str
    message: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "source_id": self.source_id,
            "stage": self.stage,
            "error_type": self.error_type,
            "message": self.message,
        }


def run_batch(
    input_manifest: str | Path,
    config: JobConfig,
    backend: GeneratorBackend,
    palette: Palette,
) -> BatchResult:
    """Run one generation batch; resumable and scheduling-independent.

    The output manifest holds exactly the successful records; items that
    hit backend errors land in the failure ledger and do not abort the
    batch. Rerunning with the same config skips sample_ids that are
    already present.
    """
    header = read_header(input_manifest)
    if palette.num_categories != header.num_categories:
        raise SegPipeError(
            f"palette has {palette.num_categories} categories, manifest declares {header.num_categories}"
        )
    reals = list(manifest_scan(input_manifest, provenance=Provenance.REAL))

    config.output_root.mkdir(parents=True, exist_ok=True)
    out_path = config.output_root / "manifest.jsonl"
    failures_path = config.output_root / "failures.jsonl"
    (config.output_root / "job.json").write_text(config.to_json(), encoding="utf-8")

    out_header = ManifestHeader(dataset=header.dataset, num_categories=header.num_categories)
    writer = ManifestWriter(out_path, out_header, resume=out_path.exists())
    already_done = writer.ids()  # snapshot before workers start
    store = PayloadStore(config.output_root)

    data_root = config.data_root

    @lru_cache(maxsize=32)
    def read_ref(ref: str) -> bytes:
        return (data_root / ref).read_bytes()

    # Refs are content-addressed, so per-sample prologues memoize cleanly:
    # datasets with shared images/masks (and stub runs) skip repeated work.
    @lru_cache(maxsize=256)
    def _memo_caption(image_ref: str) -> str:
        return _caption_prologue(image_ref, backend, read_ref)

    @lru_cache(maxsize=64)
    def _memo_conditioning(mask_ref: str) -> tuple[bytes, int]:
        return _conditioning_prologue(
            mask_ref, backend, palette, read_ref, config.task, config.edge_width, header.num_categories
        )

    caption_fn = lambda image_ref, _backend, _read: _memo_caption(image_ref)
    conditioning_fn = lambda mask_ref, *_rest: _memo_conditioning(mask_ref)

    def process(real: SampleRecord) -> tuple[list[SampleRecord], list[_ItemFailure]]:
        kind = config.mode
        pending = [i for i in range(config.count) if _syn_id(real.sample_id, kind, i) not in already_done]
        if not pending:
            return [], []

        def fail(index: int, stage: str, exc: Exception) -> _ItemFailure:
            return _ItemFailure(
                sample_id=_syn_id(real.sample_id, kind, index),
                source_id=real.sample_id,
                stage=stage,
                error_type=type(exc).__name__,
                message=str(exc),
            )

        records: list[SampleRecord] = []
        failures: list[_ItemFailure] = []
        try:
            if kind == "masksyn":
                outcomes = _iter_masksyn(
                    real, pending, backend, palette, store, read_ref,
                    config.job_seed, config.resolution, caption_fn=caption_fn,
                )
            else:
                outcomes = _iter_imgsyn(
                    real, pending, backend, palette, store, read_ref,
                    config.job_seed, config.task, config.edge_width, header.num_categories,
                    caption_fn=caption_fn, conditioning_fn=conditioning_fn,
                )
            for i, outcome in outcomes:
                if isinstance(outcome, Exception):
                    failures.append(fail(i, kind, outcome))
                else:
                    records.append(outcome)
        except (BackendError, OSError, SegPipeError) as exc:
            # the shared prologue (caption / conditioning) failed: every
            # still-pending item of this sample fails
            done = {rec.sample_id for rec in records} | {f.sample_id for f in failures}
            failures.extend(
                fail(i, "prepare", exc)
                for i in pending
                if _syn_id(real.sample_id, kind, i) not in done
            )
        return records, failures

    written = failed = skipped = 0
    expected = len(reals) * config.count
    with writer, open(failures_path, "a", encoding="utf-8") as ledger:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            for records, failures in pool.map(process, reals):
                for rec in records:
                    writer.append(rec)
                    written += 1
                for failure in failures:
                    ledger.write(json.dumps(failure.to_dict(), separators=(",", ":")) + "\n")
                    failed += 1
        skipped = expected - written - failed
    return BatchResult(
        output_manifest=out_path,
        failure_ledger=failures_path,
        records_written=written,
        failures=failed,
        skipped=skipped,
    )


def _syn_id(source_id: str, kind: str, index: int) -> str:
    return f"{source_id}:{kind}:{index:04d}"


def _is_degenerate(mask: SemanticMap) -> bool:
    labels = mask.labels
    counts = np.bincount(labels[labels != IGNORE].ravel())
    present = counts[counts > 0]
    if len(present) < 2:
        return True
    return bool(present.min() < MIN_CATEGORY_FRACTION * labels.size)
