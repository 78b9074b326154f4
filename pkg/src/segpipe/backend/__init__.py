from segpipe.backend.protocol import (
    DEFAULT_PROMPT_TEMPLATE,
    DEFAULT_RESOLUTION,
    MASK2IMG_STEPS,
    TEXT2MASK_STEPS,
    CaptionRequest,
    CaptionResponse,
    Mask2ImgRequest,
    Mask2ImgResponse,
    Text2MaskRequest,
    Text2MaskResponse,
    caption,
    mask2img,
    text2mask,
)
from segpipe.backend.mock import MockBackend, MockConfig, StubBackend
from segpipe.backend.client import RemoteBackend
from segpipe.backend.server import MockServer, serve_mock

__all__ = [
    "DEFAULT_PROMPT_TEMPLATE",
    "DEFAULT_RESOLUTION",
    "MASK2IMG_STEPS",
    "TEXT2MASK_STEPS",
    "CaptionRequest",
    "CaptionResponse",
    "Mask2ImgRequest",
    "Mask2ImgResponse",
    "Text2MaskRequest",
    "Text2MaskResponse",
    "caption",
    "mask2img",
    "text2mask",
    "MockBackend",
    "MockConfig",
    "StubBackend",
    "RemoteBackend",
    "MockServer",
    "serve_mock",
]
