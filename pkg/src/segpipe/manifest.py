"""Provenance-tracked sample manifests as newline-delimited JSON.

The first line is a header carrying schema_version, dataset name, and
num_categories; every following line is one SampleRecord. A lightweight
`<path>.index.json` sidecar mirrors the record count. Appends go through
a single writer; concurrent scans observe a consistent prefix.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from segpipe.errors import DuplicateId, FormatError, SchemaError

MANIFEST_SCHEMA_VERSION = 1


class Provenance(str, enum.Enum):
    REAL = "REAL"
    MASKSYN = "MASKSYN"
    IMGSYN = "IMGSYN"


@dataclass
class GeneratorMeta:
    """Backend identity and sampling parameters of a synthetic record."""

    backend: str
    version: str
    seed: int
    steps: dict[str, int]
    resolution: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        doc = {
            "backend": self.backend,
            "version": self.version,
            "seed": self.seed,
            "steps": self.steps,
            "resolution": self.resolution,
        }
        if self.degenerate:
            doc["degenerate"] = True
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorMeta":
        return cls(
            backend=doc["backend"],
            version=doc["version"],
            seed=doc["seed"],
            steps=dict(doc["steps"]),
            resolution=doc["resolution"],
            degenerate=doc.get("degenerate", False),
        )


@dataclass
class SampleRecord:
    """One training sample: image, mask, caption, and where it came from."""

    sample_id: str
    provenance: Provenance
    source_id: str
    image_ref: str
    mask_ref: str
    caption: str = ""
    generator_meta: GeneratorMeta | None = None

    def __post_init__(self) -> None:
        self.provenance = Provenance(self.provenance)
        if self.provenance is Provenance.REAL:
            if self.generator_meta is not None:
                raise ValueError("REAL records must not carry generator_meta")
        else:
            if self.generator_meta is None:
                raise ValueError(f"{self.provenance.value} records must carry generator_meta")
            if not self.source_id or self.source_id == self.sample_id:
                raise ValueError("synthetic records must reference their real source sample")

    def to_dict(self) -> dict:
        doc = {
            "sample_id": self.sample_id,
            "provenance": self.provenance.value,
            "source_id": self.source_id,
            "image_ref": self.image_ref,
            "mask_ref": self.mask_ref,
            "caption": self.caption,
        }
        if self.generator_meta is not None:
            doc["generator_meta"] = self.generator_meta.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SampleRecord":
        meta = doc.get("generator_meta")
        return cls(
            sample_id=doc["sample_id"],
            provenance=Provenance(doc["provenance"]),
            source_id=doc["source_id"],
            image_ref=doc["image_ref"],
            mask_ref=doc["mask_ref"],
            caption=doc.get("caption", ""),
            generator_meta=GeneratorMeta.from_dict(meta) if meta else None,
        )


@dataclass
class ManifestHeader:
    dataset: str
    num_categories: int
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dataset": self.dataset,
            "num_categories": self.num_categories,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ManifestHeader":
        version = doc.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise SchemaError(f"unsupported manifest schema_version: {version!r}")
        return cls(dataset=doc["dataset"], num_categories=doc["num_categories"], schema_version=version)


def _index_path(path: Path) -> Path:
    return path.with_name(path.name + ".index.json")


class ManifestWriter:
    """Serialized appender for one manifest file.

    Creates the file with its header, or resumes an existing one
    (loading the id set for duplicate detection). The index sidecar is
    rewritten on flush/close; the JSONL itself is the source of truth.
    """

    def __init__(self, path: str | Path, header: ManifestHeader, resume: bool = False):
        self.path = Path(path)
        self.header = header
        self._ids: set[str] = set()
        self._count = 0
        if resume and self.path.exists():
            existing = read_header(self.path)
            if existing.to_dict() != header.to_dict():
                raise SchemaError(f"resume header mismatch for {self.path}")
            for rec in manifest_scan(self.path):
                self._ids.add(rec.sample_id)
                self._count += 1
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
            self._fh.write(json.dumps(header.to_dict(), separators=(",", ":")) + "\n")

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._ids

    def __len__(self) -> int:
        return self._count

    def ids(self) -> frozenset[str]:
        return frozenset(self._ids)

    def append(self, record: SampleRecord) -> None:
        if record.sample_id in self._ids:
            raise DuplicateId(f"sample_id already present: {record.sample_id}")
        self._fh.write(json.dumps(record.to_dict(), separators=(",", ":")) + "\n")
        self._ids.add(record.sample_id)
        self._count += 1

    def flush(self) -> None:
        self._fh.flush()
        _index_path(self.path).write_text(
            json.dumps({"records": self._count, "schema_version": self.header.schema_version}),
            encoding="utf-8",
        )

    def close(self) -> None:
        if not self._fh.closed:
            self.flush()
            self._fh.close()

    def __enter__(self) -> "ManifestWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def create_manifest(path: str | Path, dataset: str, num_categories: int) -> None:
    ManifestWriter(path, ManifestHeader(dataset, num_categories)).close()


def read_header(path: str | Path) -> ManifestHeader:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise FormatError(f"manifest {path} is empty")
    return ManifestHeader.from_dict(json.loads(first))


def manifest_scan(
    path: str | Path,
    provenance: Provenance | str | None = None,
    source_id: str | None = None,
) -> Iterator[SampleRecord]:
    """Stream records in append order, optionally filtered."""
    wanted = Provenance(provenance) if provenance is not None else None
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        ManifestHeader.from_dict(json.loads(header_line))
        for line in fh:
            if not line.endswith("\n"):
                break  # in-flight append; the consistent prefix ends here
            if not line.strip():
                continue
            rec = SampleRecord.from_dict(json.loads(line))
            if wanted is not None and rec.provenance is not wanted:
                continue
            if source_id is not None and rec.source_id != source_id:
                continue
            yield rec


def manifest_append(path: str | Path, record: SampleRecord) -> None:
    """One-shot durable append with duplicate detection.

    Scans the existing file for duplicates, so bulk writers should use
    ManifestWriter instead.
    """
    path = Path(path)
    header = read_header(path)
    for rec in manifest_scan(path):
        if rec.sample_id == record.sample_id:
            raise DuplicateId(f"sample_id already present: {record.sample_id}")
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record.to_dict(), separators=(",", ":")) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    count = sum(1 for _ in manifest_scan(path))
    _index_path(path).write_text(
        json.dumps({"records": count, "schema_version": header.schema_version}),
        encoding="utf-8",
    )


def manifest_ids(path: str | Path) -> set[str]:
    return {rec.sample_id for rec in manifest_scan(path)}


def manifest_count(path: str | Path) -> int:
    """Record count by line counting; validates only the header."""
    with open(path, encoding="utf-8") as fh:
        ManifestHeader.from_dict(json.loads(fh.readline()))
        return sum(1 for line in fh if line.strip() and line.endswith("\n"))
