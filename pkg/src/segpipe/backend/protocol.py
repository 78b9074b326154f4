"""Generator wire protocol: request/response envelopes and op wrappers.

Three operations cover the whole generation surface: caption an image,
sample color maps from text, and sample images from (text, color map).
Envelopes travel as JSON with base64-encoded PNG payloads; the same
dataclasses back both in-process backends and the HTTP transport.
"""

from __future__ import annotations

import base64
import io
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol

from PIL import Image, UnidentifiedImageError

from segpipe.errors import ProtocolError, ShapeError
from segpipe.maps import ColorMap

DEFAULT_PROMPT_TEMPLATE = "Question: What are shown in the photo? Answer:"
DEFAULT_RESOLUTION = 768
TEXT2MASK_STEPS = 200
MASK2IMG_STEPS = 40


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (ValueError, TypeError) as exc:
        raise ProtocolError(f"invalid base64 payload: {exc}") from exc


@lru_cache(maxsize=64)
def png_size(data: bytes) -> tuple[int, int]:
    """(width, height) of a PNG payload without decoding pixel data.

    Cached: pipelines probe the same payload object repeatedly, and
    bytes hashes are memoized per object.
    """
    try:
        with Image.open(io.BytesIO(data)) as img:
            return img.size
    except (UnidentifiedImageError, OSError) as exc:
        raise ProtocolError(f"payload is not a decodable image: {exc}") from exc


@dataclass
class CaptionRequest:
    image_png: bytes
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def to_wire(self) -> dict:
        return {"image": _b64(self.image_png), "prompt_template": self.prompt_template}

    @classmethod
    def from_wire(cls, doc: dict) -> "CaptionRequest":
        try:
            return cls(
                image_png=_unb64(doc["image"]),
                prompt_template=doc.get("prompt_template", DEFAULT_PROMPT_TEMPLATE),
            )
        except KeyError as exc:
            raise ProtocolError(f"caption request missing field {exc}") from exc


@dataclass
class CaptionResponse:
    caption: str

    def to_wire(self) -> dict:
        return {"caption": self.caption}

    @classmethod
    def from_wire(cls, doc: dict) -> "CaptionResponse":
        try:
            return cls(caption=doc["caption"])
        except KeyError as exc:
            raise ProtocolError(f"caption response missing field {exc}") from exc


@dataclass
class Text2MaskRequest:
    prompt: str
    count: int = 1
    seed: int = 0
    resolution: int = DEFAULT_RESOLUTION
    steps: int = TEXT2MASK_STEPS
    extra: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "prompt": self.prompt,
            "count": self.count,
            "seed": self.seed,
            "resolution": self.resolution,
            "steps": self.steps,
            "extra": self.extra,
        }

    @classmethod
    def from_wire(cls, doc: dict) -> "Text2MaskRequest":
        try:
            return cls(
                prompt=doc["prompt"],
                count=int(doc.get("count", 1)),
                seed=int(doc.get("seed", 0)),
                resolution=int(doc.get("resolution", DEFAULT_RESOLUTION)),
                steps=int(doc.get("steps", TEXT2MASK_STEPS)),
                extra=dict(doc.get("extra", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed text2mask request: {exc}") from exc


@dataclass
class Text2MaskResponse:
    colormaps: list[bytes]  # PNG payloads

    def to_wire(self) -> dict:
        return {"colormaps": [_b64(p) for p in self.colormaps]}

    @classmethod
    def from_wire(cls, doc: dict) -> "Text2MaskResponse":
        try:
            return cls(colormaps=[_unb64(p) for p in doc["colormaps"]])
        except KeyError as exc:
            raise ProtocolError(f"text2mask response missing field {exc}") from exc


@dataclass
class Mask2ImgRequest:
    prompt: str
    colormap_png: bytes
    count: int = 1
    seed: int = 0
    steps: int = MASK2IMG_STEPS
    extra: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "prompt": self.prompt,
            "colormap": _b64(self.colormap_png),
            "count": self.count,
            "seed": self.seed,
            "steps": self.steps,
            "extra": self.extra,
        }

    @classmethod
    def from_wire(cls, doc: dict) -> "Mask2ImgRequest":
        try:
            return cls(
                prompt=doc["prompt"],
                colormap_png=_unb64(doc["colormap"]),
                count=int(doc.get("count", 1)),
                seed=int(doc.get("seed", 0)),
                steps=int(doc.get("steps", MASK2IMG_STEPS)),
                extra=dict(doc.get("extra", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed mask2img request: {exc}") from exc


@dataclass
class Mask2ImgResponse:
    images: list[bytes]  # PNG payloads

    def to_wire(self) -> dict:
        return {"images": [_b64(p) for p in self.images]}

    @classmethod
    def from_wire(cls, doc: dict) -> "Mask2ImgResponse":
        try:
            return cls(images=[_unb64(p) for p in doc["images"]])
        except KeyError as exc:
            raise ProtocolError(f"mask2img response missing field {exc}") from exc


class GeneratorBackend(Protocol):
    """Anything that answers the three generation requests."""

    name: str
    version: str

    def caption(self, request: CaptionRequest) -> CaptionResponse: ...

    def text2mask(self, request: Text2MaskRequest) -> Text2MaskResponse: ...

    def mask2img(self, request: Mask2ImgRequest) -> Mask2ImgResponse: ...


def caption(backend: GeneratorBackend, image_png: bytes, prompt_template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    """Extract a caption; guaranteed non-empty."""
    png_size(image_png)
    response = backend.caption(CaptionRequest(image_png=image_png, prompt_template=prompt_template))
    if not response.caption:
        raise ProtocolError("backend returned an empty caption")
    return response.caption


def text2mask(
    backend: GeneratorBackend,
    prompt: str,
    n: int,
    seed: int,
    resolution: int = DEFAULT_RESOLUTION,
    steps: int = TEXT2MASK_STEPS,
    extra: dict | None = None,
) -> list[ColorMap]:
    """Sample n color maps at resolution x resolution."""
    if n < 1:
        raise ValueError(f"count must be >= 1, got {n}")
    request = Text2MaskRequest(
        prompt=prompt, count=n, seed=seed, resolution=resolution, steps=steps, extra=extra or {}
    )
    response = backend.text2mask(request)
    if len(response.colormaps) != n:
        raise ShapeError(f"asked for {n} color maps, backend returned {len(response.colormaps)}")
    maps = []
    for payload in response.colormaps:
        if png_size(payload) != (resolution, resolution):
            raise ShapeError(
                f"backend returned {png_size(payload)} color map, expected {(resolution, resolution)}"
            )
        maps.append(ColorMap.from_png_bytes(payload))
    return maps


def mask2img(
    backend: GeneratorBackend,
    prompt: str,
    colormap_png: bytes,
    n: int,
    seed: int,
    steps: int = MASK2IMG_STEPS,
    extra: dict | None = None,
) -> list[bytes]:
    """Sample n images aligned to the conditioning color map; returns PNG payloads."""
    if n < 1:
        raise ValueError(f"count must be >= 1, got {n}")
    expected = png_size(colormap_png)
    request = Mask2ImgRequest(
        prompt=prompt, colormap_png=colormap_png, count=n, seed=seed, steps=steps, extra=extra or {}
    )
    response = backend.mask2img(request)
    if len(response.images) != n:
        raise ShapeError(f"asked for {n} images, backend returned {len(response.images)}")
    for payload in response.images:
        if png_size(payload) != expected:
            raise ShapeError(f"backend returned {png_size(payload)} image, expected {expected}")
    return response.images
