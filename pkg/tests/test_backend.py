from __future__ import annotations

import io
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import requests
from PIL import Image

from segpipe.backend import (
    MockBackend,
    MockConfig,
    RemoteBackend,
    StubBackend,
    caption,
    mask2img,
    serve_mock,
    text2mask,
)
from segpipe.backend.protocol import (
    DEFAULT_PROMPT_TEMPLATE,
    CaptionRequest,
    Mask2ImgRequest,
    Mask2ImgResponse,
    Text2MaskRequest,
    Text2MaskResponse,
)
from segpipe.colorcodec import decode_semantic, encode_semantic
from segpipe.errors import BackendUnavailable, ProtocolError, ShapeError, Timeout
from segpipe.maps import IGNORE, ColorMap, SemanticMap


def tiny_png(seed: int, size: int = 12) -> bytes:
    rng = np.random.default_rng(seed)
    buf = io.BytesIO()
    Image.fromarray(rng.integers(0, 256, size=(size, size, 3)).astype(np.uint8), "RGB").save(
        buf, format="PNG"
    )
    return buf.getvalue()


@pytest.fixture(scope="module")
def mock(palette150_module):
    return MockBackend(palette150_module)


@pytest.fixture(scope="module")
def palette150_module():
    from segpipe.colorcodec import build_palette

    return build_palette(150, 32.0)


# -- caption -------------------------------------------------------------------


def test_prompt_template_default():
    assert DEFAULT_PROMPT_TEMPLATE == "Question: What are shown in the photo? Answer:"
    assert CaptionRequest(image_png=b"x").prompt_template == DEFAULT_PROMPT_TEMPLATE


def test_caption_deterministic(mock):
    image = tiny_png(0)
    assert caption(mock, image) == caption(mock, image)


def test_caption_distinct_over_corpus(mock):
    captions = {caption(mock, tiny_png(seed)) for seed in range(100)}
    assert len(captions) == 100


def test_caption_nonempty_phrase(mock):
    text = caption(mock, tiny_png(1))
    assert text.startswith("a ")
    assert " with " in text


def test_caption_unreachable_endpoint():
    backend = RemoteBackend("http://127.0.0.1:9", retries=2, backoff=0.01, timeout=0.5)
    with pytest.raises(BackendUnavailable):
        caption(backend, tiny_png(0))


def test_remote_timeout(monkeypatch):
    def raise_timeout(*args, **kwargs):
        raise requests.Timeout("simulated")

    monkeypatch.setattr(requests, "post", raise_timeout)
    backend = RemoteBackend("http://127.0.0.1:9", retries=2, backoff=0.0)
    with pytest.raises(Timeout):
        caption(backend, tiny_png(0))


# -- text2mask ------------------------------------------------------------------


def test_text2mask_decodes_to_full_coverage(mock, palette150_module):
    maps = text2mask(mock, "a busy street", 2, seed=7, resolution=48)
    assert len(maps) == 2
    assert maps[0].pixels.shape == (48, 48, 3)
    assert not np.array_equal(maps[0].pixels, maps[1].pixels)
    half_sep = palette150_module.min_separation / 2
    for cmap in maps:
        decoded = decode_semantic(cmap, palette150_module)
        labels = decoded.labels
        assert (labels != IGNORE).all(), "mock masks must label every pixel"
        distinct = len(np.unique(labels))
        assert 2 <= distinct <= 12
        # every pixel sits strictly within half separation of its palette color
        target = palette150_module.colors[labels].astype(np.int64)
        d2 = ((cmap.pixels.astype(np.int64) - target) ** 2).sum(axis=-1)
        assert (d2 < half_sep * half_sep).all()


def test_text2mask_byte_identical(mock):
    request = Text2MaskRequest(prompt="same inputs", count=3, seed=11, resolution=32)
    first = mock.text2mask(request)
    second = mock.text2mask(request)
    assert first.colormaps == second.colormaps


def test_text2mask_seed_changes_output(mock):
    a = mock.text2mask(Text2MaskRequest(prompt="p", count=1, seed=1, resolution=32))
    b = mock.text2mask(Text2MaskRequest(prompt="p", count=1, seed=2, resolution=32))
    assert a.colormaps != b.colormaps


def test_text2mask_rejects_zero_count(mock):
    with pytest.raises(ValueError):
        text2mask(mock, "p", 0, seed=0)


def test_text2mask_category_cap_configurable(palette150_module):
    backend = MockBackend(palette150_module, MockConfig(max_categories=4))
    for i in range(5):
        cmap = text2mask(backend, "capped", 1, seed=i, resolution=32)[0]
        decoded = decode_semantic(cmap, palette150_module)
        assert 2 <= len(np.unique(decoded.labels)) <= 4


# -- mask2img --------------------------------------------------------------------


def _conditioning(palette, size: int = 36) -> ColorMap:
    labels = np.zeros((size, size), dtype=np.int32)
    labels[:, size // 3 :] = 40
    labels[: size // 2, 2 * size // 3 :] = 99
    return encode_semantic(SemanticMap(labels), palette)


def test_mask2img_byte_identical(mock, palette150_module):
    cond = _conditioning(palette150_module).to_png_bytes()
    first = mask2img(mock, "a room", cond, 2, seed=5)
    second = mask2img(mock, "a room", cond, 2, seed=5)
    assert first == second
    assert len(first) == 2
    assert first[0] != first[1]


def test_mask2img_region_statistics_differ(mock, palette150_module):
    cond = _conditioning(palette150_module)
    payload = mask2img(mock, "texture probe", cond.to_png_bytes(), 1, seed=3)[0]
    image = np.asarray(Image.open(io.BytesIO(payload))).astype(np.float64)
    labels = decode_semantic(cond, palette150_module).labels
    means = [image[labels == c].mean() for c in (0, 40, 99)]
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(means[i] - means[j]) > 1.0


def test_mask2img_matches_conditioning_dimensions(mock, palette150_module):
    cond = _conditioning(palette150_module, size=20)
    payloads = mask2img(mock, "p", cond.to_png_bytes(), 1, seed=0)
    with Image.open(io.BytesIO(payloads[0])) as img:
        assert img.size == (20, 20)


class WrongShapeBackend:
    name = "broken"
    version = "0"

    def mask2img(self, request):
        return Mask2ImgResponse(images=[tiny_png(0, size=5)] * request.count)

    def text2mask(self, request):
        return Text2MaskResponse(colormaps=[tiny_png(0, size=5)] * request.count)


def test_shape_error_on_wrong_dimensions(palette150_module):
    cond = _conditioning(palette150_module, size=16).to_png_bytes()
    with pytest.raises(ShapeError):
        mask2img(WrongShapeBackend(), "p", cond, 1, seed=0)
    with pytest.raises(ShapeError):
        text2mask(WrongShapeBackend(), "p", 1, seed=0, resolution=16)


# -- stub backend -----------------------------------------------------------------


def test_stub_backend_fixed_payloads(palette150_module):
    stub = StubBackend(palette150_module)
    a = stub.text2mask(Text2MaskRequest(prompt="x", count=2, seed=1, resolution=16))
    b = stub.text2mask(Text2MaskRequest(prompt="y", count=2, seed=9, resolution=16))
    assert a.colormaps == b.colormaps
    decoded = decode_semantic(ColorMap.from_png_bytes(a.colormaps[0]), palette150_module)
    assert set(np.unique(decoded.labels)) == {0, 1}

    cond = a.colormaps[0]
    img = stub.mask2img(Mask2ImgRequest(prompt="x", colormap_png=cond, count=1, seed=0))
    with Image.open(io.BytesIO(img.images[0])) as im:
        assert im.size == (16, 16)


# -- wire protocol / mock server ----------------------------------------------------


@pytest.fixture(scope="module")
def server(palette150_module):
    with serve_mock(palette150_module) as running:
        yield running


def test_remote_equals_in_process_byte_for_byte(server, mock):
    remote = RemoteBackend(server.url, retries=2)
    image = tiny_png(4)

    local_caption = mock.caption(CaptionRequest(image_png=image))
    remote_caption = remote.caption(CaptionRequest(image_png=image))
    assert remote_caption == local_caption

    request = Text2MaskRequest(prompt="loopback", count=2, seed=13, resolution=32)
    assert remote.text2mask(request).colormaps == mock.text2mask(request).colormaps

    cond = mock.text2mask(Text2MaskRequest(prompt="c", count=1, seed=1, resolution=24)).colormaps[0]
    m2i = Mask2ImgRequest(prompt="loopback", colormap_png=cond, count=2, seed=17)
    assert remote.mask2img(m2i).images == mock.mask2img(m2i).images


def test_concurrent_requests_succeed(server):
    remote = RemoteBackend(server.url)

    def one(seed: int):
        return remote.text2mask(Text2MaskRequest(prompt="concurrent", count=1, seed=seed, resolution=24))

    with ThreadPoolExecutor(max_workers=8) as pool:
        results = list(pool.map(one, range(16)))
    assert len({r.colormaps[0] for r in results}) == 16


def test_malformed_request_returns_protocol_error(server):
    response = requests.post(server.url + "/v1/text2mask", data=b"this is not json", timeout=10)
    assert response.status_code == 400
    assert response.json()["error"]["type"] == "ProtocolError"

    missing = requests.post(server.url + "/v1/caption", json={"nope": 1}, timeout=10)
    assert missing.status_code == 400

    unknown = requests.post(server.url + "/v1/other", json={}, timeout=10)
    assert unknown.status_code == 404


def test_client_raises_protocol_error_on_rejection(server):
    remote = RemoteBackend(server.url)
    with pytest.raises(ProtocolError):
        remote.caption(CaptionRequest(image_png=b"not a png"))


def test_bind_error_on_taken_port(server, palette150_module):
    from segpipe.errors import BindError

    port = int(server.url.rsplit(":", 1)[1])
    with pytest.raises(BindError):
        serve_mock(palette150_module, port=port)


def test_payload_pngs_roundtrip_losslessly(mock):
    payload = mock.text2mask(Text2MaskRequest(prompt="rt", count=1, seed=2, resolution=20)).colormaps[0]
    cmap = ColorMap.from_png_bytes(payload)
    assert cmap.to_png_bytes() == payload


def test_wire_envelope_roundtrip():
    request = Mask2ImgRequest(prompt="p", colormap_png=b"\x89PNGxyz", count=2, seed=3, extra={"cfg": 7.5})
    again = Mask2ImgRequest.from_wire(json.loads(json.dumps(request.to_wire())))
    assert again == request
