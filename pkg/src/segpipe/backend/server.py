"""HTTP wrapper exposing a mock backend over the wire protocol.

Handlers are stateless per request, so the threading server answers
concurrent connections without coordination.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from segpipe.backend.mock import MockBackend, MockConfig
from segpipe.backend.protocol import CaptionRequest, Mask2ImgRequest, Text2MaskRequest
from segpipe.colorcodec import Palette
from segpipe.errors import BindError, ProtocolError


class _Handler(BaseHTTPRequestHandler):
    backend: MockBackend  # set by serve_mock on the subclass

    def do_POST(self) -> None:  # noqa: N802 (http.server API)
        routes = {
            "/v1/caption": (CaptionRequest, self.backend.caption),
            "/v1/text2mask": (Text2MaskRequest, self.backend.text2mask),
            "/v1/mask2img": (Mask2ImgRequest, self.backend.mask2img),
        }
        route = routes.get(self.path)
        if route is None:
            self._send(404, {"error": {"type": "ProtocolError", "message": f"unknown path {self.path}"}})
            return
        request_type, handler = route
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
            doc = json.loads(body)
            if not isinstance(doc, dict):
                raise ProtocolError("request body must be a JSON object")
            request = request_type.from_wire(doc)
            response = handler(request)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            self._send(400, {"error": {"type": "ProtocolError", "message": f"invalid JSON: {exc}"}})
            return
        except ProtocolError as exc:
            self._send(400, {"error": {"type": "ProtocolError", "message": str(exc)}})
            return
        except Exception as exc:  # mock failure; report, keep serving
            self._send(500, {"error": {"type": "BackendError", "message": str(exc)}})
            return
        self._send(200, response.to_wire())

    def _send(self, status: int, doc: dict) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt: str, *args) -> None:
        pass  # silence per-request stderr lines


class MockServer:
    """Running mock endpoint; use as a context manager or start/shutdown."""

    def __init__(self, palette: Palette, port: int = 0, host: str = "127.0.0.1", config: MockConfig | None = None):
        backend = MockBackend(palette, config)
        handler = type("BoundHandler", (_Handler,), {"backend": backend})
        try:
            self._server = ThreadingHTTPServer((host, port), handler)
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()


def serve_mock(palette: Palette, port: int = 0, host: str = "127.0.0.1", config: MockConfig | None = None) -> MockServer:
    """Bind and return a MockServer (not yet started)."""
    return MockServer(palette, port=port, host=host, config=config)
