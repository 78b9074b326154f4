"""Training-feed strategies for synthetic data.

The augmentation sampler walks seeded epoch permutations of the real
set and, at each draw, swaps the real sample for one of its linked
synthetic offspring with probability p_aug. The pre-train/fine-tune
strategy instead emits provenance-pure manifests.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from segpipe.errors import DanglingSource
from segpipe.manifest import ManifestHeader, ManifestWriter, Provenance, manifest_scan, read_header
from segpipe.seeds import derive_seed


@dataclass
class FeedPlan:
    """Everything the sampler needs: the real set, linkage, p_aug, seed.

    With global_pool=True replacement draws from the union of all
    synthetic ids instead of the per-sample linkage.
    """

    real_ids: list[str]
    linkage: dict[str, list[str]]
    p_aug: float
    seed: int = 0
    global_pool: bool = False

    def __post_init__(self) -> None:
        if not self.real_ids:
            raise ValueError("FeedPlan requires at least one real sample")
        if len(set(self.real_ids)) != len(self.real_ids):
            raise ValueError("real_ids must be unique")
        if not 0.0 <= self.p_aug <= 1.0:
            raise ValueError(f"p_aug must lie in [0, 1], got {self.p_aug}")
        unknown = set(self.linkage) - set(self.real_ids)
        if unknown:
            raise ValueError(f"linkage keys are not real ids: {sorted(unknown)[:5]}")

    @property
    def epoch_length(self) -> int:
        return len(self.real_ids)


class AugmentStream:
    """Deterministic id stream; iterate once and read the counters after.

    Multiple consumers must shard by iteration index rather than share
    one stream object.
    """

    def __init__(self, plan: FeedPlan, num_iterations: int):
        if num_iterations < 0:
            raise ValueError(f"num_iterations must be >= 0, got {num_iterations}")
        self.plan = plan
        self.num_iterations = num_iterations
        self.real_emitted = 0
        self.synthetic_emitted = 0
        self.shortfall = 0  # replacement drawn but linkage was empty

    def __iter__(self) -> Iterator[str]:
        plan = self.plan
        draw_rng = np.random.default_rng(derive_seed("feed.draws", plan.seed))
        pool = sorted({sid for ids in plan.linkage.values() for sid in ids}) if plan.global_pool else None
        n = plan.epoch_length

        perm: np.ndarray | None = None
        for it in range(self.num_iterations):
            offset = it % n
            if offset == 0:
                epoch_rng = np.random.default_rng(derive_seed("feed.epoch", plan.seed, it // n))
                perm = epoch_rng.permutation(n)
            real_id = plan.real_ids[perm[offset]]

            replace = draw_rng.random() < plan.p_aug
            if replace:
                candidates = pool if plan.global_pool else plan.linkage.get(real_id, [])
                if candidates:
                    self.synthetic_emitted += 1
                    yield candidates[int(draw_rng.integers(len(candidates)))]
                    continue
                self.shortfall += 1
            self.real_emitted += 1
            yield real_id


def augment_stream(plan: FeedPlan, num_iterations: int) -> AugmentStream:
    return AugmentStream(plan, num_iterations)


def build_linkage(
    real_manifest: str | Path,
    syn_manifests: list[str | Path],
    cap_per_real: int | None = None,
    seed: int = 0,
) -> dict[str, list[str]]:
    """Group synthetic ids by their real source, optionally capped.

    The cap down-samples uniformly without replacement with a per-real
    seeded generator, so results are stable across runs and independent
    of other samples.
    """
    real_ids = [rec.sample_id for rec in manifest_scan(real_manifest, provenance=Provenance.REAL)]
    linkage: dict[str, list[str]] = {rid: [] for rid in real_ids}
    known = set(real_ids)

    for path in syn_manifests:
        for rec in manifest_scan(path):
            if rec.provenance is Provenance.REAL:
                continue
            if rec.source_id not in known:
                raise DanglingSource(
                    f"synthetic record {rec.sample_id} references missing real id {rec.source_id}"
                )
            linkage[rec.source_id].append(rec.sample_id)

    if cap_per_real is not None:
        if cap_per_real < 0:
            raise ValueError(f"cap_per_real must be >= 0, got {cap_per_real}")
        for rid, ids in linkage.items():
            if len(ids) > cap_per_real:
                rng = np.random.default_rng(derive_seed("feed.cap", seed, rid))
                keep = rng.choice(len(ids), size=cap_per_real, replace=False)
                linkage[rid] = [ids[i] for i in sorted(keep)]
    return linkage


def emit_pretrain(syn_manifests: list[str | Path], out_path: str | Path) -> int:
    """Write a manifest holding only the synthetic records; returns the count."""
    header = read_header(syn_manifests[0])
    count = 0
    with ManifestWriter(out_path, ManifestHeader(header.dataset, header.num_categories)) as writer:
        for path in syn_manifests:
            for rec in manifest_scan(path):
                if rec.provenance is not Provenance.REAL:
                    writer.append(rec)
                    count += 1
    return count


def emit_finetune(real_manifest: str | Path, out_path: str | Path) -> int:
    """Write a manifest holding only the REAL records; returns the count."""
    header = read_header(real_manifest)
    count = 0
    with ManifestWriter(out_path, ManifestHeader(header.dataset, header.num_categories)) as writer:
        for rec in manifest_scan(real_manifest, provenance=Provenance.REAL):
            writer.append(rec)
            count += 1
    return count


def write_id_list(stream: AugmentStream, out_path: str | Path) -> dict:
    """Materialize a stream to a newline-delimited id list; returns stats."""
    with open(out_path, "w", encoding="utf-8") as fh:
        for sample_id in stream:
            fh.write(sample_id + "\n")
    total = stream.real_emitted + stream.synthetic_emitted
    return {
        "iterations": total,
        "real": stream.real_emitted,
        "synthetic": stream.synthetic_emitted,
        "shortfall": stream.shortfall,
        "synthetic_fraction": stream.synthetic_emitted / total if total else 0.0,
    }
