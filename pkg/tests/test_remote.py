import json
import threading
import urllib.error
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from biralab import remote
from biralab.lm import SamplingConfig
from biralab.remote import (BiasMapOverflowError, MalformedResponseError, RemoteConfig, RemoteNetworkError,
                            RemoteRewriter, build_request, parse_response, remote_generate, retokenize_bridge)
from biralab.watermark import WatermarkScheme

FIXTURE_RESPONSE = {"text": "a short rewrite", "tokens": [5, 9, 2], "logprobs": [-0.5, -1.25, -0.1]}
CHAT_RESPONSE = {"choices": [{"message": {"content": "hi"},
                              "logprobs": {"content": [{"token": "hi", "logprob": -0.3}]}}]}


class MockServer:
    """Replays a scripted list of (status, body) pairs and records requests."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                outer.requests.append({"body": json.loads(body), "headers": dict(self.headers)})
                status, payload = outer.script.pop(0) if outer.script else (200, FIXTURE_RESPONSE)
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *a):
                pass

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_port}/v1/generate"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


CFG = SamplingConfig(temperature=0.7, top_p=0.95, seed=3)


def test_empty_bias_is_plain_request():
    body = build_request("hello", {}, CFG, RemoteConfig("http://x"))
    assert "logit_bias" not in body
    assert body["prompt"] == "hello" and body["temperature"] == 0.7 and body["top_p"] == 0.95


def test_overflow_before_network(monkeypatch):
    calls = []
    monkeypatch.setattr(remote, "_post", lambda *a: calls.append(a))
    rcfg = RemoteConfig("http://127.0.0.1:9/unused", max_bias_entries=3)
    with pytest.raises(BiasMapOverflowError):
        remote_generate(rcfg, "p", {i: -1.0 for i in range(4)}, CFG)
    assert calls == []


def test_fixture_round_trip():
    with MockServer([(200, FIXTURE_RESPONSE)]) as srv:
        rcfg = RemoteConfig(srv.url, auth_token="tok")
        resp = remote_generate(rcfg, "rewrite this", {7: -4.0, 3: -4.0}, CFG)
    assert resp.text == "a short rewrite" and resp.tokens == [5, 9, 2] and resp.logprobs == [-0.5, -1.25, -0.1]
    req = srv.requests[0]
    assert req["body"]["logit_bias"] == {"3": -4.0, "7": -4.0}
    assert req["body"]["seed"] == 3
    assert req["headers"]["Authorization"] == "Bearer tok"
    # the recorded response parses back to the same object
    assert parse_response(json.dumps(resp.raw)) == resp


def test_chat_shape():
    resp = parse_response(CHAT_RESPONSE)
    assert resp.text == "hi" and resp.logprobs == [-0.3] and resp.tokens is None


def test_retries_transient_then_succeeds():
    sleeps = []
    with MockServer([(503, {"error": "busy"}), (429, {"error": "slow"}), (200, FIXTURE_RESPONSE)]) as srv:
        rcfg = RemoteConfig(srv.url, backoff=0.25, max_attempts=4)
        resp = remote_generate(rcfg, "p", {}, CFG, sleep=sleeps.append)
    assert resp.text == "a short rewrite"
    assert len(srv.requests) == 3
    assert sleeps == [0.25, 0.5]


def test_gives_up_after_bounded_attempts():
    sleeps = []
    with MockServer([(503, {})] * 5) as srv:
        rcfg = RemoteConfig(srv.url, backoff=0.1, max_attempts=3)
        with pytest.raises(RemoteNetworkError):
            remote_generate(rcfg, "p", {}, CFG, sleep=sleeps.append)
    assert len(srv.requests) == 3 and len(sleeps) == 2


def test_unreachable_is_network_error():
    rcfg = RemoteConfig("http://127.0.0.1:1/none", max_attempts=2, timeout=1)
    with pytest.raises(RemoteNetworkError):
        remote_generate(rcfg, "p", {}, CFG, sleep=lambda s: None)


def test_client_error_not_retried():
    with MockServer([(400, {"error": "bad"})]) as srv:
        with pytest.raises(remote.RemoteError) as exc:
            remote_generate(RemoteConfig(srv.url), "p", {}, CFG, sleep=lambda s: None)
    assert not isinstance(exc.value, RemoteNetworkError)
    assert len(srv.requests) == 1


@pytest.mark.parametrize("payload", [b"not json", b"[1]", b'{"foo": 1}', b'{"text": 3}',
                                     b'{"text": "x", "tokens": ["a"]}', b'{"choices": [{"message": {}}]}'])
def test_malformed_responses(payload):
    with MockServer([(200, payload)]) as srv:
        with pytest.raises(MalformedResponseError):
            remote_generate(RemoteConfig(srv.url), "p", {}, CFG, sleep=lambda s: None)


def test_key_never_sent():
    scheme = WatermarkScheme(key=987654321987)
    with MockServer([(200, FIXTURE_RESPONSE)]) as srv:
        rw = RemoteRewriter(RemoteConfig(srv.url), {1: "a", 2: "b"}, {"a": [10], "b": [11, 12]})
        rw.rewrite("some text", [1, 2], -4.0, CFG)
    wire = json.dumps(srv.requests[0])
    assert str(scheme.key) not in wire
    assert "green" not in wire
    assert srv.requests[0]["body"]["logit_bias"] == {"10": -4.0, "11": -4.0, "12": -4.0}
    assert srv.requests[0]["body"]["prompt"].endswith("some text")


class TestBridge:
    def test_identity(self):
        surface = {i: f"t{i}" for i in range(10)}
        vocab = {f"t{i}": [i] for i in range(10)}
        r = retokenize_bridge([3, 1, 4], surface, vocab)
        assert r.target_ids == [1, 3, 4] and r.unmapped == 0

    def test_unmapped_counted(self, caplog):
        r = retokenize_bridge([1, 2], {1: "a", 2: "zz"}, {"a": [5]})
        assert r.target_ids == [5] and r.unmapped == 1

    def test_overlapping_expansions(self):
        surface = {1: "ab", 2: "bc", 3: "abc", 4: "ab"}
        vocab = {"ab": [7, 8], "bc": [8, 9], "abc": [7, 8, 9, 7]}
        brute = set()
        for i in (1, 2, 3, 4):
            brute |= set(vocab[surface[i]])
        r = retokenize_bridge([4, 3, 2, 1, 1], surface, vocab)
        assert r.target_ids == sorted(brute) == [7, 8, 9]


def test_default_prompt_asset():
    text = remote.default_paraphrase_prompt()
    assert text.strip() and len(text) < 2000


def test_attack_module_has_no_remote_or_key_dependency():
    import ast
    import importlib.util
    src = importlib.util.find_spec("biralab.attack").origin
    tree = ast.parse(open(src, encoding="utf-8").read())
    imported = {n.module for n in ast.walk(tree) if isinstance(n, ast.ImportFrom)}
    imported |= {a.name for n in ast.walk(tree) if isinstance(n, ast.Import) for a in n.names}
    assert not any(m and ("remote" in m or "watermark" in m or "analysis" in m) for m in imported)
