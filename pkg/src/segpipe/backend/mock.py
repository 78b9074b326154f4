"""Deterministic in-process backends.

MockBackend makes the whole pipeline runnable without any GPU model:
captions are phrase templates keyed by image content hash, text2mask
produces seeded Voronoi partitions colored from the palette (with
bounded per-pixel noise below half the palette separation, so decoding
recovers the ground-truth labels exactly), and mask2img blends the
conditioning map with a seeded per-segment texture.

StubBackend returns fixed tiny payloads as fast as possible; it exists
for scale/dry runs where only record arithmetic matters.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

import segpipe
from segpipe.backend.protocol import (
    CaptionRequest,
    CaptionResponse,
    Mask2ImgRequest,
    Mask2ImgResponse,
    Text2MaskRequest,
    Text2MaskResponse,
    png_size,
)
from segpipe.colorcodec import Palette, decode_semantic
from segpipe.maps import IGNORE, ColorMap
from segpipe.seeds import derive_seed

_ADJECTIVES = (
    "sunlit", "quiet", "crowded", "foggy", "snowy", "rainy", "cluttered", "tidy",
    "narrow", "spacious", "dim", "bright", "old", "modern", "rustic", "coastal",
    "busy", "empty", "colorful", "shaded", "windy", "dusty", "green", "frozen",
    "wooden", "stone", "industrial", "suburban", "ornate", "plain", "steep", "flat",
)

_SCENES = (
    "kitchen", "living room", "bedroom", "bathroom", "hallway", "office", "classroom",
    "library", "restaurant", "cafe", "market", "street", "alley", "plaza", "park",
    "garden", "forest", "beach", "harbor", "mountain trail", "meadow", "riverbank",
    "lake shore", "parking lot", "train station", "airport terminal", "museum hall",
    "warehouse", "workshop", "garage", "rooftop", "courtyard", "staircase", "balcony",
    "greenhouse", "farmyard", "playground", "stadium", "bridge", "tunnel",
)

_OBJECTS = (
    "a wooden table", "several chairs", "a large window", "potted plants", "a parked car",
    "two bicycles", "a stone fountain", "street lamps", "a row of books", "a red sofa",
    "hanging pictures", "a tiled floor", "a striped awning", "market stalls", "tall trees",
    "a small boat", "fishing nets", "a brick wall", "traffic signs", "an open umbrella",
    "a metal fence", "scattered leaves", "a glass door", "ceiling fans", "stacked crates",
    "a television", "a patterned rug", "colorful flowers", "a narrow path", "park benches",
    "a food cart", "distant hills", "power lines", "a clock tower", "painted murals",
    "a wooden pier", "moored sailboats", "grazing sheep", "a garden hose", "stone steps",
    "a vending machine", "neon signage", "an old piano", "a spiral staircase",
    "laundry lines", "a watering can", "a chalkboard", "leaning ladders",
)

_MOODS = (
    "at dawn", "at dusk", "in the afternoon", "under a clear sky", "under heavy clouds",
    "after the rain", "in warm light", "in cold light", "during winter", "in early spring",
    "on a summer day", "in autumn colors", "at night", "in soft haze", "under bright sun",
    "in the early morning",
)


@dataclass
class MockConfig:
    max_categories: int = 12  # upper bound on distinct categories per generated map
    min_categories: int = 2


class MockBackend:
    """Referentially transparent generator; responses depend only on requests."""

    name = "mock"
    version = segpipe.__version__

    def __init__(self, palette: Palette, config: MockConfig | None = None):
        self.palette = palette
        self.config = config or MockConfig()

    # -- caption ---------------------------------------------------------

    def caption(self, request: CaptionRequest) -> CaptionResponse:
        png_size(request.image_png)  # the protocol requires a decodable image
        digest = hashlib.sha256(
            request.prompt_template.encode("utf-8") + b"\x00" + request.image_png
        ).digest()

        def pick(i: int, options: tuple) -> str:
            return options[int.from_bytes(digest[2 * i : 2 * i + 2], "big") % len(options)]

        first = pick(2, _OBJECTS)
        second_options = tuple(o for o in _OBJECTS if o != first)
        caption = (
            f"a {pick(0, _ADJECTIVES)} {pick(1, _SCENES)} with {first} "
            f"and {pick(3, second_options)} {pick(4, _MOODS)}"
        )
        return CaptionResponse(caption=caption)

    # -- text2mask -------------------------------------------------------

    def text2mask(self, request: Text2MaskRequest) -> Text2MaskResponse:
        payloads = []
        for i in range(request.count):
            rng = np.random.default_rng(derive_seed("mock.text2mask", request.prompt, request.seed, i))
            payloads.append(self._voronoi_colormap(rng, request.resolution).to_png_bytes())
        return Text2MaskResponse(colormaps=payloads)

    def _voronoi_colormap(self, rng: np.random.Generator, resolution: int) -> ColorMap:
        num_cats = self.palette.num_categories
        low = min(self.config.min_categories, num_cats, resolution * resolution)
        high = min(self.config.max_categories, num_cats, resolution * resolution)
        k = int(rng.integers(low, high + 1))
        categories = rng.choice(num_cats, size=k, replace=False)

        n_sites = min(k + int(rng.integers(0, k + 4)), resolution * resolution)
        # Distinct positions guarantee every site keeps at least its own
        # pixel, so all k categories survive into the map.
        flat_pos = rng.choice(resolution * resolution, size=n_sites, replace=False)
        sites = np.stack(np.unravel_index(flat_pos, (resolution, resolution)), axis=1)
        site_cats = np.concatenate([categories, rng.choice(categories, size=n_sites - k)])

        xx = np.arange(resolution)
        labels = np.empty((resolution, resolution), dtype=np.int64)
        # Row blocks keep the pixel-to-site distance tensor small at 768px.
        rows = max(1, (1 << 18) // (resolution * max(1, n_sites)))
        for y0 in range(0, resolution, rows):
            yy = np.arange(y0, min(y0 + rows, resolution))
            d2 = (yy[:, None, None] - sites[:, 0]) ** 2 + (xx[None, :, None] - sites[:, 1]) ** 2
            labels[y0 : y0 + rows] = site_cats[np.argmin(d2, axis=2)]

        colors = self.palette.colors[labels].astype(np.int32)
        amp = int(self.palette.min_separation / 2 / math.sqrt(3))
        if amp > 0:
            colors += rng.integers(-amp, amp + 1, size=colors.shape, dtype=np.int32)
        return ColorMap(np.clip(colors, 0, 255).astype(np.uint8))

    # -- mask2img --------------------------------------------------------

    def mask2img(self, request: Mask2ImgRequest) -> Mask2ImgResponse:
        conditioning = ColorMap.from_png_bytes(request.colormap_png)
        labels = decode_semantic(conditioning, self.palette).labels
        label_idx = np.where(labels == IGNORE, self.palette.num_categories, labels)

        yy, xx = np.mgrid[0 : conditioning.height, 0 : conditioning.width]
        ripple = ((3 * xx + 5 * yy) % 29) - 14

        payloads = []
        for i in range(request.count):
            rng = np.random.default_rng(derive_seed("mock.mask2img", request.prompt, request.seed, i))
            base = rng.integers(16, 240, size=(self.palette.num_categories + 1, 3), dtype=np.int32)
            texture = base[label_idx] + ripple[..., None]
            blended = (2 * conditioning.pixels.astype(np.int32) + 3 * texture) // 5
            payloads.append(ColorMap(np.clip(blended, 0, 255).astype(np.uint8)).to_png_bytes())
        return Mask2ImgResponse(images=payloads)


class StubBackend:
    """Constant tiny payloads for count-only scale runs."""

    name = "stub"
    version = segpipe.__version__

    def __init__(self, palette: Palette):
        self.palette = palette
        self._colormap_cache: dict[int, bytes] = {}
        self._image_cache: dict[tuple[int, int], bytes] = {}

    def caption(self, request: CaptionRequest) -> CaptionResponse:
        tag = hashlib.sha256(request.image_png).hexdigest()[:8]
        return CaptionResponse(caption=f"stub scene {tag}")

    def text2mask(self, request: Text2MaskRequest) -> Text2MaskResponse:
        payload = self._colormap_cache.get(request.resolution)
        if payload is None:
            res = request.resolution
            second = min(1, self.palette.num_categories - 1)
            pixels = np.empty((res, res, 3), dtype=np.uint8)
            pixels[:, : res // 2] = self.palette.colors[0]
            pixels[:, res // 2 :] = self.palette.colors[second]
            payload = ColorMap(pixels).to_png_bytes()
            self._colormap_cache[request.resolution] = payload
        return Text2MaskResponse(colormaps=[payload] * request.count)

    def mask2img(self, request: Mask2ImgRequest) -> Mask2ImgResponse:
        size = png_size(request.colormap_png)
        payload = self._image_cache.get(size)
        if payload is None:
            buf = io.BytesIO()
            Image.new("RGB", size, (128, 128, 128)).save(buf, format="PNG")
            payload = buf.getvalue()
            self._image_cache[size] = payload
        return Mask2ImgResponse(images=[payload] * request.count)
