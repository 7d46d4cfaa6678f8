from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from pathdecode.lm import DecodedPath, Token, ToyLm


def make_path(texts, gaps=None, probs=None, ents=None, lgaps=None,
              finished=True, seed_rank=None) -> DecodedPath:
    """Assemble a DecodedPath directly, for scoring tests without a backend."""
    n = len(texts)
    gaps = list(gaps) if gaps is not None else [0.5] * n
    probs = list(probs) if probs is not None else [0.9] * n
    ents = list(ents) if ents is not None else [0.0] * n
    lgaps = list(lgaps) if lgaps is not None else [None] * n
    tokens = [Token(i + 1, t) for i, t in enumerate(texts)]
    return DecodedPath(tokens, probs, gaps, ents, lgaps, finished, seed_rank=seed_rank)


TINY_CHAIN = """\
Q:\tA:0.6,B:0.3,C:0.1
Q: A\tis:0.8,was:0.1
Q: A is\tgood:0.7,bad:0.2
Q: A is good\t</s>:0.9,still:0.05
Q: B\t</s>:0.9,is:0.05
Q: C\t</s>:0.9,is:0.05
"""


@pytest.fixture
def tiny_lm() -> ToyLm:
    """Three greedy tokens (A is good) then EOS; two distractor branches."""
    return ToyLm.from_text(TINY_CHAIN)


class _StubHandler(BaseHTTPRequestHandler):
    server_version = "stub/0"

    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        status, payload = self.server.respond(self.path, body, dict(self.headers))
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class StubServer(ThreadingHTTPServer):
    """In-process HTTP server with a pluggable response function."""

    def __init__(self):
        super().__init__(("127.0.0.1", 0), _StubHandler)
        self.requests: list[tuple[str, dict, dict]] = []
        self.responder = None

    def respond(self, path, body, headers):
        self.requests.append((path, body, headers))
        return self.responder(path, body, headers)

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server_address[1]}"


@pytest.fixture
def stub_server():
    server = StubServer()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()


def completion_payload(top_logprobs: dict[str, float]) -> dict:
    tokens = sorted(top_logprobs, key=lambda t: -top_logprobs[t])
    return {
        "choices": [{
            "text": tokens[0],
            "logprobs": {
                "tokens": [tokens[0]],
                "token_logprobs": [top_logprobs[tokens[0]]],
                "top_logprobs": [top_logprobs],
            },
            "finish_reason": "length",
        }]
    }
