from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from treesift.corpus import QAFormat, Sample, Source

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES_DIR = REPO_ROOT / "fixtures"
PROMPTS_DIR = REPO_ROOT / "prompts"
CONFIG_PATH = REPO_ROOT / "configs" / "fixture_pipeline.json"


def make_sample(
    sample_id: str = "Other/s1",
    prompt: str = "What is 2 + 2?",
    answer: str = "4",
    source: Source = Source.OTHER,
    image_ref: str = "images/none.png",
) -> Sample:
    return Sample(
        id=sample_id,
        image_ref=image_ref,
        prompt=prompt,
        answer=answer,
        source=source,
        qa_format=QAFormat.OPEN_ENDED,
    )


class StubChatServer:
    """Local chat-completion endpoint with a scripted response queue.

    Each queued entry is ``(status, headers, payload)``; payload may be a
    list of reply strings (wrapped into choices) or a raw dict. Requests
    are recorded for payload assertions.
    """

    def __init__(self):
        self.requests: list[dict] = []
        self.responses: list[tuple[int, dict, object]] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length)) if length else {}
                stub.requests.append(
                    {"path": self.path, "headers": dict(self.headers), "body": body}
                )
                status, headers, payload = (
                    stub.responses.pop(0) if stub.responses else (200, {}, [""])
                )
                if isinstance(payload, list):
                    payload = {
                        "choices": [{"message": {"content": text}} for text in payload]
                    }
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                for key, value in headers.items():
                    self.send_header(key, value)
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1"

    def queue(self, payload, status: int = 200, headers: dict | None = None):
        self.responses.append((status, headers or {}, payload))

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_server():
    with StubChatServer() as server:
        yield server
