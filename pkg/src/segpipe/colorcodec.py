"""Category <-> color lookup table and the bidirectional mask/color codecs.

Encoding paints each category with its palette color (panoptic maps
additionally get instance boundaries outlined in a reserved edge color);
decoding assigns every pixel the category of its Euclidean-nearest
palette color. The palette is built greedily so that all colors sit at
least `min_separation` apart, which makes decoding provably robust to
per-pixel color drift below half that separation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from segpipe.errors import CapacityError, LabelOutOfRange, SchemaError
from segpipe.maps import IGNORE, VOID, ColorMap, PanopticMap, SemanticMap, panoptic_to_semantic

PALETTE_SCHEMA_VERSION = 1

DEFAULT_MIN_SEPARATION = 32.0
DEFAULT_EDGE_WIDTH = 3

VOID_COLOR = (0, 0, 0)
EDGE_COLOR = (255, 255, 255)

# Candidate grid for palette construction: every 8th level plus the 255
# endpoint, traversed lexicographically in (r, g, b).
_LATTICE_LEVELS = tuple(range(0, 256, 8)) + (255,)


@dataclass(eq=False)
class Palette:
    """Category-index -> RGB lookup table with reserved void and edge colors."""

    num_categories: int
    colors: np.ndarray  # (num_categories, 3) uint8
    void_color: tuple[int, int, int] = VOID_COLOR
    edge_color: tuple[int, int, int] = EDGE_COLOR
    min_separation: float = DEFAULT_MIN_SEPARATION
    _candidates: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        colors = np.asarray(self.colors, dtype=np.uint8)
        if colors.shape != (self.num_categories, 3):
            raise ValueError(f"expected {self.num_categories} colors, got shape {colors.shape}")
        self.colors = colors
        # Decode candidate set: category colors first (index = category),
        # void last so ties resolve to the lowest category and void loses.
        self._candidates = np.vstack([colors.astype(np.int64), np.array([self.void_color], dtype=np.int64)])

    def to_json(self) -> str:
        doc = {
            "schema_version": PALETTE_SCHEMA_VERSION,
            "num_categories": self.num_categories,
            "min_separation": self.min_separation,
            "void_color": list(self.void_color),
            "edge_color": list(self.edge_color),
            "colors": self.colors.tolist(),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Palette":
        doc = json.loads(text)
        version = doc.get("schema_version")
        if version != PALETTE_SCHEMA_VERSION:
            raise SchemaError(f"unsupported palette schema_version: {version!r}")
        return cls(
            num_categories=doc["num_categories"],
            colors=np.array(doc["colors"], dtype=np.uint8),
            void_color=tuple(doc["void_color"]),
            edge_color=tuple(doc["edge_color"]),
            min_separation=doc["min_separation"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Palette":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_palette(num_categories: int, min_separation: float = DEFAULT_MIN_SEPARATION) -> Palette:
    """Pick `num_categories` colors by greedy farthest-point selection.

    The RGB lattice is traversed deterministically, seeded with
    void=(0,0,0) and edge=(255,255,255); each step takes the first
    candidate maximizing the minimum distance to everything chosen so
    far. Equal inputs therefore produce byte-identical palettes.

    Raises CapacityError when the next-best candidate would fall closer
    than `min_separation` to an already-chosen color.
    """
    if not 1 <= num_categories <= 512:
        raise ValueError(f"num_categories must be in [1, 512], got {num_categories}")
    if min_separation <= 0:
        raise ValueError(f"min_separation must be positive, got {min_separation}")

    levels = np.array(_LATTICE_LEVELS, dtype=np.int64)
    grid = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), axis=-1).reshape(-1, 3)

    min_sq = _sq_dist_to(grid, np.array(VOID_COLOR, dtype=np.int64))
    np.minimum(min_sq, _sq_dist_to(grid, np.array(EDGE_COLOR, dtype=np.int64)), out=min_sq)

    required_sq = min_separation * min_separation
    chosen = np.empty((num_categories, 3), dtype=np.int64)
    for k in range(num_categories):
        best = int(np.argmax(min_sq))
        if min_sq[best] < required_sq:
            raise CapacityError(
                f"cannot place {num_categories} colors at separation {min_separation}; "
                f"stuck after {k} (best remaining distance {np.sqrt(min_sq[best]):.2f})"
            )
        chosen[k] = grid[best]
        np.minimum(min_sq, _sq_dist_to(grid, grid[best]), out=min_sq)

    return Palette(
        num_categories=num_categories,
        colors=chosen.astype(np.uint8),
        min_separation=min_separation,
    )


def _sq_dist_to(points: np.ndarray, ref: np.ndarray) -> np.ndarray:
    d = points - ref
    return (d * d).sum(axis=1)


def encode_semantic(smap: SemanticMap, palette: Palette) -> ColorMap:
    """Paint each label with its palette color; IGNORE pixels get void_color."""
    labels = smap.labels
    _check_labels(labels.max(initial=IGNORE), palette.num_categories)
    lut = np.vstack([palette.colors, np.array([palette.void_color], dtype=np.uint8)])
    # IGNORE (-1) indexes the trailing void row.
    return ColorMap(lut[labels])


def encode_panoptic(pmap: PanopticMap, palette: Palette, edge_width: int = DEFAULT_EDGE_WIDTH) -> ColorMap:
    """Paint segments with their category colors and outline boundaries.

    A pixel is a boundary pixel iff any pixel within Chebyshev radius
    ceil(edge_width / 2) carries a different segment id; image borders
    are not outlined. Edge color overwrites category color on segment
    pixels; VOID pixels always keep void_color.
    """
    if edge_width < 1:
        raise ValueError(f"edge_width must be >= 1, got {edge_width}")
    ids = pmap.segment_ids
    categories = pmap.category_of()
    if categories:
        _check_labels(max(categories.values()), palette.num_categories)

    semantic = panoptic_to_semantic(pmap)
    colored = encode_semantic(semantic, palette).pixels.copy()

    boundary = panoptic_boundary(ids, edge_width)
    colored[boundary & (ids != VOID)] = np.array(palette.edge_color, dtype=np.uint8)
    return ColorMap(colored)


def panoptic_boundary(segment_ids: np.ndarray, edge_width: int) -> np.ndarray:
    """Boolean mask of pixels whose Chebyshev neighborhood spans >1 segment id."""
    radius = (edge_width + 1) // 2
    size = 2 * radius + 1
    # mode="nearest" replicates border values, which only repeats the pixel's
    # own neighborhood members: out-of-image positions never introduce ids.
    hi = maximum_filter(segment_ids, size=size, mode="nearest")
    lo = minimum_filter(segment_ids, size=size, mode="nearest")
    return hi != lo


def decode_semantic(colormap: ColorMap, palette: Palette) -> SemanticMap:
    """Assign each pixel the category of its nearest candidate color.

    Candidates are the category colors plus void_color (void decodes to
    IGNORE); the edge color is not a candidate. Distances are exact
    squared integers; ties resolve to the lowest category index, with
    void losing every tie.
    """
    cand = palette._candidates.astype(np.float64)  # categories 0..N-1, then void
    flat = colormap.pixels.reshape(-1, 3).astype(np.float64)
    c_sq = (cand * cand).sum(axis=1)
    nearest = np.empty(len(flat), dtype=np.int32)
    # Chunked so the distance matrix stays tens of MB even at 768x768.
    chunk = 1 << 16
    for start in range(0, len(flat), chunk):
        block = flat[start : start + chunk]
        # |p - c|^2 = |p|^2 - 2 p.c + |c|^2. Every term is an integer far
        # below 2^53, so float64 keeps the arithmetic exact while the matmul
        # gets BLAS; ties stay integer-exact and argmin picks the first
        # (lowest) index.
        p_sq = (block * block).sum(axis=1)
        dist = p_sq[:, None] - 2.0 * (block @ cand.T) + c_sq[None, :]
        nearest[start : start + chunk] = np.argmin(dist, axis=1)
    nearest[nearest == palette.num_categories] = IGNORE
    return SemanticMap(nearest.reshape(colormap.height, colormap.width))


def to_binary_masks(smap: SemanticMap) -> list[tuple[int, np.ndarray]]:
    """Split a semantic map into per-category boolean masks.

    Returns one (category, mask) pair per category present, in ascending
    category order; masks are pairwise disjoint and, together with the
    IGNORE pixels, tile the image.
    """
    labels = smap.labels
    present = np.unique(labels)
    return [(int(c), labels == c) for c in present if c != IGNORE]


def _check_labels(max_label: int, num_categories: int) -> None:
    if max_label >= num_categories:
        raise LabelOutOfRange(f"label {int(max_label)} >= num_categories {num_categories}")
