"""HTTP client for remote generator services.

Requests are idempotent (fully seeded), so retries with exponential
backoff are safe for resuming large batches.
"""

from __future__ import annotations

import time

import requests

from segpipe.backend.protocol import (
    CaptionRequest,
    CaptionResponse,
    Mask2ImgRequest,
    Mask2ImgResponse,
    Text2MaskRequest,
    Text2MaskResponse,
)
from segpipe.errors import BackendUnavailable, ProtocolError, Timeout

DEFAULT_TIMEOUT = 60.0
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF = 0.5


class RemoteBackend:
    """Client side of the generator wire protocol; safe for concurrent use."""

    name = "remote"

    def __init__(
        self,
        base_url: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = DEFAULT_BACKOFF,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.version = self.base_url

    def caption(self, request: CaptionRequest) -> CaptionResponse:
        return CaptionResponse.from_wire(self._post("/v1/caption", request.to_wire()))

    def text2mask(self, request: Text2MaskRequest) -> Text2MaskResponse:
        return Text2MaskResponse.from_wire(self._post("/v1/text2mask", request.to_wire()))

    def mask2img(self, request: Mask2ImgRequest) -> Mask2ImgResponse:
        return Mask2ImgResponse.from_wire(self._post("/v1/mask2img", request.to_wire()))

    def _post(self, path: str, payload: dict) -> dict:
        url = self.base_url + path
        last_error: Exception | None = None
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                response = requests.post(url, json=payload, timeout=self.timeout)
            except requests.Timeout as exc:
                last_error = exc
                continue
            except requests.RequestException as exc:
                last_error = exc
                continue
            if 400 <= response.status_code < 500:
                raise ProtocolError(f"{url} rejected the request ({response.status_code}): {response.text}")
            if response.status_code != 200:
                last_error = BackendUnavailable(f"{url} returned {response.status_code}")
                continue
            try:
                return response.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned a non-JSON body") from exc
        if isinstance(last_error, requests.Timeout):
            raise Timeout(f"{url} timed out after {self.retries} attempts") from last_error
        raise BackendUnavailable(f"{url} unreachable after {self.retries} attempts: {last_error}")
