import json
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from agentdebate.gateway import (BackendSpec, BackendUnavailable, ChatMessage, ChatRequest,
                                 MalformedBackendReply, ScriptExhausted, TimeoutExceeded,
                                 complete_chat, dump_request, healthcheck, load_script,
                                 open_backend)


def req(tag, text="hello", **kw):
    return ChatRequest("m", (ChatMessage("system", "sys"), ChatMessage("user", text)),
                       request_tag=tag, **kw)


# ---------------------------------------------------------------------------
# request validation

def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", ())
    with pytest.raises(ValueError):
        ChatRequest("m", (ChatMessage("user", "a"), ChatMessage("system", "b")))
    with pytest.raises(ValueError):
        ChatRequest("m", (ChatMessage("user", "a"),), temperature=3.0)
    with pytest.raises(ValueError):
        ChatRequest("m", (ChatMessage("user", "a"),), max_tokens=0)
    with pytest.raises(ValueError):
        ChatMessage("tool", "x")
    with pytest.raises(ValueError):
        ChatMessage("user", "")


def test_request_accessors():
    r = req("t", "question")
    assert r.system == "sys"
    assert r.text() == "sys\nquestion"
    assert json.loads(dump_request(r))["tag"] == "t"
    assert ChatRequest("m", [ChatMessage("user", "a")]).system is None


def test_spec_validation():
    with pytest.raises(ValueError):
        BackendSpec("x", "grpc")
    with pytest.raises(ValueError):
        BackendSpec("x", "http")
    with pytest.raises(ValueError):
        BackendSpec("x", "scripted")
    with pytest.raises(ValueError):
        BackendSpec("x", "http", endpoint="http://h", retry_budget=-1)
    with pytest.raises(ValueError):
        BackendSpec("x", "http", endpoint="http://h", timeout=0)


# ---------------------------------------------------------------------------
# scripted backend

def scripted(script, **kw):
    return open_backend(BackendSpec("s", "scripted", script=script, **kw))


def test_scripted_fifo_and_constant():
    b = scripted({"a": ["one", "two"], "b": "always"})
    assert complete_chat(b, req("a")).content == "one"
    assert complete_chat(b, req("a")).content == "two"
    with pytest.raises(ScriptExhausted):
        complete_chat(b, req("a"))
    for _ in range(3):
        assert complete_chat(b, req("b")).content == "always"


def test_scripted_patterns_and_tag_substitution():
    b = scripted({"run01/x/opening": "exact", "run*/x/*": "pattern {tag}"})
    assert b.complete(req("run01/x/opening")).content == "exact"
    assert b.complete(req("run02/x/round01")).content == "pattern run02/x/round01"


def test_scripted_unknown_tag_and_empty_reply():
    b = scripted({"a": "   ", "n": [""]})
    with pytest.raises(ScriptExhausted):
        b.complete(req("zzz"))
    with pytest.raises(MalformedBackendReply):
        b.complete(req("a"))
    with pytest.raises(MalformedBackendReply):
        b.complete(req("n"))


def test_scripted_is_deterministic_and_observed():
    seen = []
    script = {"*": "reply to {tag}"}
    b1 = open_backend(BackendSpec("s", "scripted", script=script), seen.append)
    b2 = scripted(script)
    for tag in ("a", "b", "c"):
        assert b1.complete(req(tag)).content == b2.complete(req(tag)).content
    assert [r.request_tag for r in seen] == ["a", "b", "c"]
    assert healthcheck(b1)["reachable"] is True


def test_scripted_rejects_bad_entry():
    with pytest.raises(ValueError):
        scripted({"a": 3})


def test_load_script(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("a: [x, y]\nb: z\n")
    assert load_script(p) == {"a": ["x", "y"], "b": "z"}
    p.write_text("- a\n")
    with pytest.raises(ValueError):
        load_script(p)


# ---------------------------------------------------------------------------
# HTTP backend against a local stub server

class Stub:
    def __init__(self):
        self.posts = []
        self.headers = []
        self.mode = "ok"
        self.sleep = 0.0
        self.models = ["llama3.2:latest", "mistral"]


def make_server(stub):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, code, body, ctype="application/json"):
            data = body.encode() if isinstance(body, str) else body
            self.send_response(code)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            try:
                self.wfile.write(data)
            except (BrokenPipeError, ConnectionResetError):
                pass

        def do_GET(self):
            if self.path.endswith("/models"):
                self._send(200, json.dumps({"data": [{"id": m} for m in stub.models]}))
            else:
                self._send(404, "{}")

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length))
            stub.posts.append(payload)
            stub.headers.append(dict(self.headers))
            if stub.sleep:
                time.sleep(stub.sleep)
            if stub.mode == "garbage":
                self._send(200, "<html>not json</html>", "text/html")
            elif stub.mode == "empty":
                self._send(200, json.dumps({"choices": [{"message": {"content": ""}}]}))
            elif stub.mode == "500":
                self._send(500, "boom")
            elif stub.mode == "400":
                self._send(400, "bad request")
            elif stub.mode == "flaky" and len(stub.posts) == 1:
                self._send(503, "warming up")
            else:
                text = f"echo {payload['messages'][-1]['content']}"
                self._send(200, json.dumps({"choices": [{"message": {"role": "assistant",
                                                                     "content": text}}]}))

    return ThreadingHTTPServer(("127.0.0.1", 0), Handler)


@pytest.fixture
def stub_server():
    stub = Stub()
    server = make_server(stub)
    server.daemon_threads = True
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    stub.url = f"http://127.0.0.1:{server.server_address[1]}/v1"
    yield stub
    server.shutdown()
    server.server_close()


def http(stub, **kw):
    kw.setdefault("model_id", "llama3.2")
    return open_backend(BackendSpec("h", "http", endpoint=stub.url, **kw))


def test_http_round_trip(stub_server):
    b = http(stub_server, api_key="sekrit")
    resp = b.complete(req("t", "hi", max_tokens=50))
    assert resp.content == "echo hi"
    assert resp.attempt_count == 1
    payload = stub_server.posts[0]
    assert payload["model"] == "m"
    assert payload["stream"] is False
    assert payload["temperature"] == 0.35
    assert payload["max_tokens"] == 50
    assert payload["messages"][0] == {"role": "system", "content": "sys"}
    assert stub_server.headers[0]["Authorization"] == "Bearer sekrit"


def test_http_server_default_temperature_is_omitted(stub_server):
    b = http(stub_server)
    b.complete(req("t", temperature=None))
    assert "temperature" not in stub_server.posts[0]
    assert "max_tokens" not in stub_server.posts[0]


def test_http_timeout_exhausts_retry_budget(stub_server):
    stub_server.sleep = 0.6
    b = http(stub_server, timeout=0.2, retry_budget=2)
    with pytest.raises(TimeoutExceeded) as info:
        b.complete(req("slow"))
    assert info.value.attempts == 3
    time.sleep(0.7)  # let the stalled handlers finish recording
    assert len(stub_server.posts) == 3


def test_http_retries_server_errors_then_succeeds(stub_server):
    stub_server.mode = "flaky"
    resp = http(stub_server, retry_budget=1).complete(req("t"))
    assert resp.attempt_count == 2 and resp.content.startswith("echo")


def test_http_persistent_server_error(stub_server):
    stub_server.mode = "500"
    with pytest.raises(BackendUnavailable) as info:
        http(stub_server, retry_budget=1).complete(req("t"))
    assert info.value.attempts == 2
    assert len(stub_server.posts) == 2


def test_http_client_error_is_not_retried(stub_server):
    stub_server.mode = "400"
    with pytest.raises(MalformedBackendReply):
        http(stub_server, retry_budget=2).complete(req("t"))
    assert len(stub_server.posts) == 1


@pytest.mark.parametrize("mode", ["garbage", "empty"])
def test_http_malformed_reply(stub_server, mode):
    stub_server.mode = mode
    with pytest.raises(MalformedBackendReply):
        http(stub_server).complete(req("t"))


def test_http_healthcheck(stub_server):
    report = http(stub_server).healthcheck()
    assert report["reachable"] and report["model_available"]
    assert report["models"] == ["llama3.2:latest", "mistral"]
    assert http(stub_server, model_id="gpt-x").healthcheck()["model_available"] is False


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_http_connection_refused():
    spec = BackendSpec("h", "http", endpoint=f"http://127.0.0.1:{free_port()}/v1",
                       model_id="m", retry_budget=1, timeout=2)
    b = open_backend(spec)
    report = b.healthcheck()
    assert report["reachable"] is False and report["error"]
    with pytest.raises(BackendUnavailable) as info:
        b.complete(req("t"))
    assert info.value.attempts == 2
