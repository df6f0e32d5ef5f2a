"""Scriptable chat-completion stub for exercising the remote client."""

from __future__ import annotations

import json
import threading
import time
from collections.abc import Callable
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def completion(text: str, finish_reason: str = "stop") -> dict:
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": text},
                         "finish_reason": finish_reason}]}


class Reply:
    def __init__(self, status: int = 200, body: dict | str | None = None, headers: dict | None = None,
                 delay: float = 0.0):
        self.status = status
        self.body = body if body is not None else completion("MoveAhead")
        self.headers = headers or {}
        self.delay = delay


class StubServer:
    """Serves replies from ``script`` in order (the last one repeats), or from
    ``responder(request_json)`` when given. Tracks peak concurrency."""

    def __init__(self, script: list[Reply] | None = None, responder: Callable[[dict], Reply] | None = None):
        self.script = list(script or [Reply()])
        self.responder = responder
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.in_flight = 0
        self.peak = 0
        self._lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("content-length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                with stub._lock:
                    stub.requests.append(payload)
                    stub.headers.append(dict(self.headers))
                    stub.in_flight += 1
                    stub.peak = max(stub.peak, stub.in_flight)
                    n = len(stub.requests) - 1
                try:
                    reply = stub.responder(payload) if stub.responder else stub.script[min(n, len(stub.script) - 1)]
                    if reply.delay:
                        time.sleep(reply.delay)
                    data = reply.body if isinstance(reply.body, str) else json.dumps(reply.body)
                    raw = data.encode()
                    try:
                        self.send_response(reply.status)
                        self.send_header("content-type", "application/json")
                        self.send_header("content-length", str(len(raw)))
                        for k, v in reply.headers.items():
                            self.send_header(k, v)
                        self.end_headers()
                        self.wfile.write(raw)
                    except (BrokenPipeError, ConnectionResetError):
                        pass
                finally:
                    with stub._lock:
                        stub.in_flight -= 1

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self._thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.02},
                                        daemon=True)

    def __enter__(self) -> StubServer:
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
