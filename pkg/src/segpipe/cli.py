"""Command-line entry point exposing the full pipeline.

Subcommands mirror the pipeline stages one-to-one: palette, encode,
decode, gen, feed, metrics, mock-serve. Every run prints a
reproducibility header (versions, seeds, config hash) to stderr.
Runtime failures exit 1 with a machine-readable JSON error line on
stderr; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import PIL
from PIL import Image

import segpipe
from segpipe.backend import MockBackend, MockConfig, RemoteBackend, StubBackend, serve_mock
from segpipe.backend.protocol import DEFAULT_RESOLUTION
from segpipe.colorcodec import (
    DEFAULT_EDGE_WIDTH,
    DEFAULT_MIN_SEPARATION,
    Palette,
    build_palette,
    decode_semantic,
    encode_panoptic,
    encode_semantic,
)
from segpipe.errors import SegPipeError
from segpipe.feed import FeedPlan, augment_stream, build_linkage, write_id_list
from segpipe.formats import load_ade20k_annotation, load_coco_panoptic, save_ade20k_annotation
from segpipe.manifest import Provenance, manifest_scan, read_header
from segpipe.maps import ColorMap
from segpipe.metrics import SemanticTally, combine_pq, pq
from segpipe.pipeline import JobConfig, run_batch
from segpipe.report import panoptic_report, semantic_report, write_report

ENV_BACKEND_URL = "SEGPIPE_BACKEND_URL"
ENV_DATA_ROOT = "SEGPIPE_DATA_ROOT"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    _print_header(args)
    try:
        return args.func(args)
    except SegPipeError as exc:
        _print_error(exc)
        return 1
    except (OSError, ValueError) as exc:
        _print_error(exc)
        return 1


def _print_header(args: argparse.Namespace) -> None:
    config = {k: str(v) for k, v in sorted(vars(args).items()) if k != "func"}
    config_hash = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]
    seed = getattr(args, "job_seed", getattr(args, "seed", None))
    print(
        f"segpipe {segpipe.__version__} | python {platform.python_version()} "
        f"| numpy {np.__version__} | pillow {PIL.__version__}",
        file=sys.stderr,
    )
    print(
        f"command={args.command} seed={seed} config_hash={config_hash}",
        file=sys.stderr,
    )


def _print_error(exc: Exception) -> None:
    doc = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(doc), file=sys.stderr)


def _load_or_build_palette(palette_path: str | None, num_categories: int | None) -> Palette:
    if palette_path:
        return Palette.load(palette_path)
    if num_categories is None:
        raise SegPipeError("need either --palette or --num-categories")
    return build_palette(num_categories, DEFAULT_MIN_SEPARATION)


# -- palette ---------------------------------------------------------------


def _cmd_palette(args: argparse.Namespace) -> int:
    palette = build_palette(args.num_categories, args.min_separation)
    palette.save(args.out)
    print(json.dumps({"out": str(args.out), "num_categories": palette.num_categories}))
    return 0


# -- encode / decode ---------------------------------------------------------


def _cmd_encode(args: argparse.Namespace) -> int:
    palette = _load_or_build_palette(args.palette, args.num_categories)
    data = Path(args.input).read_bytes()
    if args.task == "panoptic":
        sidecar = args.segments_info or (args.input + ".segments.json")
        segments_info = json.loads(Path(sidecar).read_text(encoding="utf-8"))
        pmap = load_coco_panoptic(data, segments_info)
        colormap = encode_panoptic(pmap, palette, edge_width=args.edge_width)
    else:
        smap = load_ade20k_annotation(data, palette.num_categories)
        colormap = encode_semantic(smap, palette)
    Path(args.out).write_bytes(colormap.to_png_bytes())
    print(json.dumps({"out": str(args.out), "height": colormap.height, "width": colormap.width}))
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    palette = _load_or_build_palette(args.palette, args.num_categories)
    colormap = ColorMap.from_png_bytes(Path(args.input).read_bytes())
    smap = decode_semantic(colormap, palette)
    Path(args.out).write_bytes(save_ade20k_annotation(smap))
    print(json.dumps({"out": str(args.out), "height": smap.height, "width": smap.width}))
    return 0


# -- gen ---------------------------------------------------------------------


def _cmd_gen(args: argparse.Namespace) -> int:
    header = read_header(args.manifest)
    palette = _load_or_build_palette(args.palette, header.num_categories)
    if args.mock:
        backend = MockBackend(palette)
    elif args.stub:
        backend = StubBackend(palette)
    else:
        endpoint = args.endpoint or os.environ.get(ENV_BACKEND_URL)
        if not endpoint:
            raise SegPipeError(f"need --mock, --stub, or an endpoint (--endpoint / {ENV_BACKEND_URL})")
        backend = RemoteBackend(endpoint)
    data_root = args.data_root or os.environ.get(ENV_DATA_ROOT) or str(Path(args.manifest).parent)
    config = JobConfig(
        mode=args.mode,
        count=args.count,
        job_seed=args.job_seed,
        output_root=Path(args.output_root),
        data_root=Path(data_root),
        parallelism=args.parallelism,
        task=args.task,
        resolution=args.resolution,
        edge_width=args.edge_width,
    )
    result = run_batch(args.manifest, config, backend, palette)
    print(
        json.dumps(
            {
                "output_manifest": str(result.output_manifest),
                "failure_ledger": str(result.failure_ledger),
                "records_written": result.records_written,
                "failures": result.failures,
                "skipped": result.skipped,
            }
        )
    )
    return 0


# -- feed ----------------------------------------------------------------------


def _cmd_feed(args: argparse.Namespace) -> int:
    real_ids = [rec.sample_id for rec in manifest_scan(args.real, provenance=Provenance.REAL)]
    linkage = build_linkage(args.real, args.syn, cap_per_real=args.cap_per_real, seed=args.seed)
    plan = FeedPlan(
        real_ids=real_ids,
        linkage=linkage,
        p_aug=args.p_aug,
        seed=args.seed,
        global_pool=args.global_pool,
    )
    stats = write_id_list(augment_stream(plan, args.iterations), args.out)
    print(json.dumps({"out": str(args.out), **stats}))
    return 0


# -- metrics ---------------------------------------------------------------------


def _paired_files(pred_dir: Path, gt_dir: Path) -> list[tuple[Path, Path]]:
    pairs = []
    for pred_path in sorted(pred_dir.glob("*.png")):
        gt_path = gt_dir / pred_path.name
        if not gt_path.exists():
            raise SegPipeError(f"no ground-truth file for {pred_path.name} in {gt_dir}")
        pairs.append((pred_path, gt_path))
    if not pairs:
        raise SegPipeError(f"no PNG files found in {pred_dir}")
    return pairs


def _load_semantic_any(path: Path, palette: Palette):
    """Grayscale PNGs are label masks; RGB PNGs are color maps to decode."""
    data = path.read_bytes()
    with Image.open(path) as img:
        mode = img.mode
    if mode == "RGB":
        return decode_semantic(ColorMap.from_png_bytes(data), palette)
    return load_ade20k_annotation(data, palette.num_categories)


def _cmd_metrics(args: argparse.Namespace) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    pairs = _paired_files(pred_dir, gt_dir)
    if args.task == "semantic":
        palette = _load_or_build_palette(args.palette, args.num_categories)
        tally = SemanticTally(palette.num_categories)
        for pred_path, gt_path in pairs:
            tally.update(_load_semantic_any(pred_path, palette), _load_semantic_any(gt_path, palette))
        report = semantic_report(tally, num_images=len(pairs))
    else:
        pred_segments = json.loads((pred_dir / "segments.json").read_text(encoding="utf-8"))
        gt_segments = json.loads((gt_dir / "segments.json").read_text(encoding="utf-8"))
        results = []
        for pred_path, gt_path in pairs:
            pred_map = load_coco_panoptic(pred_path.read_bytes(), pred_segments[pred_path.name])
            gt_map = load_coco_panoptic(gt_path.read_bytes(), gt_segments[gt_path.name])
            results.append(pq(pred_map, gt_map))
        report = panoptic_report(combine_pq(results), num_images=len(pairs))
    written = write_report(report, args.out_dir, figures=not args.no_figures)
    summary = {"out_dir": str(args.out_dir), "files": [str(p) for p in written]}
    if report["task"] == "semantic":
        summary["miou"] = report["miou"]
    else:
        summary["pq"] = report["pq"]
    print(json.dumps(summary))
    return 0


# -- mock-serve ---------------------------------------------------------------------


def _cmd_mock_serve(args: argparse.Namespace) -> int:
    palette = _load_or_build_palette(args.palette, args.num_categories)
    config = MockConfig(max_categories=args.max_categories)
    server = serve_mock(palette, port=args.port, host=args.host, config=config)
    print(json.dumps({"url": server.url}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


# -- parser ------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segpipe",
        description="Segmentation data synthesis pipeline: codecs, generation, feeds, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("palette", help="build a deterministic category color lookup table")
    p.add_argument("--num-categories", type=int, required=True)
    p.add_argument("--min-separation", type=float, default=DEFAULT_MIN_SEPARATION)
    p.add_argument("--out", required=True, help="output palette JSON path")
    p.set_defaults(func=_cmd_palette)

    p = sub.add_parser("encode", help="encode a segmentation mask into a color map PNG")
    p.add_argument("--input", required=True, help="mask PNG (grayscale semantic or RGB panoptic)")
    p.add_argument("--palette", help="palette JSON (default: canonical palette for --num-categories)")
    p.add_argument("--num-categories", type=int)
    p.add_argument("--task", choices=["semantic", "panoptic"], default="semantic")
    p.add_argument("--segments-info", help="segments_info JSON for panoptic input")
    p.add_argument("--edge-width", type=int, default=DEFAULT_EDGE_WIDTH)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="decode a color map PNG into a semantic mask")
    p.add_argument("--input", required=True, help="color map PNG")
    p.add_argument("--palette")
    p.add_argument("--num-categories", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("gen", help="run a MaskSyn or ImgSyn generation batch")
    p.add_argument("--mode", choices=["masksyn", "imgsyn"], required=True)
    p.add_argument("--manifest", required=True, help="input manifest of REAL records")
    p.add_argument("--count", type=int, required=True, help="generations per real sample")
    p.add_argument("--mock", action="store_true", help="use the in-process deterministic mock backend")
    p.add_argument("--stub", action="store_true", help="use the constant-payload stub backend")
    p.add_argument("--endpoint", help=f"remote backend URL (or {ENV_BACKEND_URL})")
    p.add_argument("--palette", help="palette JSON (default: canonical palette for the manifest)")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--job-seed", type=int, default=0)
    p.add_argument("--output-root", required=True)
    p.add_argument("--data-root", help=f"root for input refs (or {ENV_DATA_ROOT}; default: manifest dir)")
    p.add_argument("--task", choices=["semantic", "panoptic"], default="semantic")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    p.add_argument("--edge-width", type=int, default=DEFAULT_EDGE_WIDTH)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("feed", help="emit a training id stream with synthetic replacement")
    p.add_argument("--real", required=True, help="manifest of REAL records")
    p.add_argument("--syn", action="append", default=[], help="synthetic manifest (repeatable)")
    p.add_argument("--p-aug", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--cap-per-real", type=int)
    p.add_argument("--global-pool", action="store_true", help="draw replacements from the global pool")
    p.add_argument("--out", required=True, help="newline-delimited id list path")
    p.set_defaults(func=_cmd_feed)

    p = sub.add_parser("metrics", help="evaluate predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--task", choices=["semantic", "panoptic"], default="semantic")
    p.add_argument("--palette")
    p.add_argument("--num-categories", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("mock-serve", help="serve the deterministic mock backend over HTTP")
    p.add_argument("--port", type=int, default=8731)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--palette")
    p.add_argument("--num-categories", type=int, default=150)
    p.add_argument("--max-categories", type=int, default=12)
    p.set_defaults(func=_cmd_mock_serve)

    return parser


if __name__ == "__main__":
    raise SystemExit(main())
