"""HTTP inference server hosting one model behind a tiny JSON protocol.

Wire protocol
-------------
GET /v1/meta
    200 {"num_classes": C, "mode": "soft"|"hard", "input_shape": [c, h, w]}
POST /v1/predict
    request  {"shape": [c, h, w], "pixels": "<base64 little-endian float32>"}
    200 soft {"logits": [...]}  |  200 hard {"label": k}
    400 {"error": "..."} on malformed input, 429 {"error": "budget_exhausted"}
    once a client exceeds the per-client query budget.

Pixels travel as base64-wrapped binary and logits as JSON numbers printed
from double precision, so a float32 round trip through the wire is exact and
remote attacks can reproduce in-process trajectories bit for bit.
"""

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import nn


class _Handler(BaseHTTPRequestHandler):
    server_version = "ensattack"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        self.server.request_count += 1
        if self.path != "/v1/meta":
            self._send(404, {"error": "unknown path"})
            return
        model = self.server.model
        self._send(200, {
            "num_classes": model.num_classes,
            "mode": self.server.mode,
            "input_shape": list(model.input_shape),
        })

    def do_POST(self):
        self.server.request_count += 1
        if self.path != "/v1/predict":
            self._send(404, {"error": "unknown path"})
            return
        client = self.client_address[0]
        budget = self.server.budget
        if budget is not None:
            with self.server.budget_lock:
                used = self.server.budget_used.get(client, 0)
                if used >= budget:
                    self._send(429, {"error": "budget_exhausted"})
                    return
                self.server.budget_used[client] = used + 1
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
            shape = tuple(int(v) for v in body["shape"])
            pixels = np.frombuffer(base64.b64decode(body["pixels"]), dtype="<f4")
        except (KeyError, TypeError, ValueError) as exc:
            self._send(400, {"error": f"malformed request: {exc}"})
            return
        model = self.server.model
        if shape != model.input_shape:
            self._send(400, {"error": f"shape {list(shape)} does not match model "
                                      f"input {list(model.input_shape)}"})
            return
        if pixels.size != int(np.prod(shape)):
            self._send(400, {"error": "pixel count does not match shape"})
            return
        image = pixels.reshape(shape)
        if float(image.min()) < 0.0 or float(image.max()) > 1.0:
            self._send(400, {"error": "pixels outside [0,1]"})
            return
        z = nn.forward(model, image)
        if self.server.mode == "soft":
            self._send(200, {"logits": [float(v) for v in z]})
        else:
            self._send(200, {"label": int(np.argmax(z))})


class ServerHandle:
    def __init__(self, httpd: ThreadingHTTPServer, thread: threading.Thread):
        self._httpd = httpd
        self._thread = thread
        host, port = httpd.server_address[:2]
        self.url = f"http://{host}:{port}"

    @property
    def request_count(self) -> int:
        return self._httpd.request_count

    def close(self) -> None:
        self._httpd.shutdown()
        self._thread.join()
        self._httpd.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(model: nn.Model, mode: str = "soft", bind: str = "127.0.0.1:0",
          budget: int | None = None, background: bool = True):
    """Starts the server. With background=True (default) returns a
    ServerHandle whose .url is ready for connect(); otherwise blocks."""
    if mode not in ("soft", "hard"):
        raise ValueError(f"unknown mode {mode!r}")
    host, _, port = bind.rpartition(":")
    httpd = ThreadingHTTPServer((host or "127.0.0.1", int(port)), _Handler)
    httpd.daemon_threads = True
    httpd.model = model
    httpd.mode = mode
    httpd.budget = budget
    httpd.budget_used = {}
    httpd.budget_lock = threading.Lock()
    httpd.request_count = 0
    if not background:
        try:
            httpd.serve_forever()
        finally:
            httpd.server_close()
        return None
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    return ServerHandle(httpd, thread)
