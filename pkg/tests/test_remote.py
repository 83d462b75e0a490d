"""Remote backend retry behavior against a real local HTTP server."""

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from cotforge.errors import BackendError, MalformedResponseError, ValidationError
from cotforge.remote import RemoteQaGenerator

GOOD_BODY = {
    "question": "Which organ contains the mass?",
    "answer": "liver",
    "cot": "The image shows a mass. It overlaps the liver.",
}


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        self.server.requests.append(body)
        script = self.server.script
        action = script[min(len(self.server.requests) - 1, len(script) - 1)]
        if action == "ok":
            payload = json.dumps(GOOD_BODY).encode()
        elif action == "missing-answer":
            payload = json.dumps({"question": "q?", "cot": "c."}).encode()
        elif action == "not-json":
            payload = b"<html>oops</html>"
        elif action == "slow":
            time.sleep(0.5)
            payload = json.dumps(GOOD_BODY).encode()
        elif isinstance(action, int):
            self.send_response(action)
            self.end_headers()
            return
        else:
            raise AssertionError(f"unknown action {action}")
        try:
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        except (BrokenPipeError, ConnectionResetError):
            pass  # the timeout test hangs up mid-response on purpose

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    srv.daemon_threads = True  # don't wait out the "slow" handler on close
    srv.script = ["ok"]
    srv.requests = []
    thread = threading.Thread(
        target=lambda: srv.serve_forever(poll_interval=0.02), daemon=True
    )
    thread.start()
    try:
        yield srv
    finally:
        srv.shutdown()
        srv.server_close()


def client(server, **kwargs):
    sleeps = []
    gen = RemoteQaGenerator(
        f"http://127.0.0.1:{server.server_address[1]}/qa",
        timeout=kwargs.pop("timeout", 5.0),
        backoff_base=kwargs.pop("backoff_base", 0.01),
        sleeper=sleeps.append,
        **kwargs,
    )
    return gen, sleeps


class TestHappyPath:
    def test_round_trip_and_payload(self, server):
        gen, _ = client(server)
        result = gen.generate("There is a mass in the liver.", "img_1", "CT")
        assert result == (GOOD_BODY["question"], GOOD_BODY["answer"],
                          GOOD_BODY["cot"])
        assert server.requests == [{
            "seed": "There is a mass in the liver.",
            "image_id": "img_1",
            "modality": "CT",
        }]

    def test_generator_id_names_endpoint(self, server):
        gen, _ = client(server)
        assert gen.generator_id.startswith("remote:http://127.0.0.1:")


class TestRetries:
    def test_5xx_then_success_with_exponential_backoff(self, server):
        server.script = [500, 503, "ok"]
        gen, sleeps = client(server)
        result = gen.generate("seed text", "img", "CT")
        assert result[1] == "liver"
        assert len(server.requests) == 3
        assert sleeps == [0.01, 0.02]

    def test_persistent_5xx_exhausts_attempts(self, server):
        server.script = [500]
        gen, sleeps = client(server)
        with pytest.raises(BackendError, match="attempt 3/3.*status 500"):
            gen.generate("seed text", "img", "CT")
        assert len(server.requests) == 3
        assert sleeps == [0.01, 0.02]

    def test_4xx_fails_without_retry(self, server):
        server.script = [404]
        gen, sleeps = client(server)
        with pytest.raises(BackendError, match="404"):
            gen.generate("seed text", "img", "CT")
        assert len(server.requests) == 1
        assert sleeps == []

    def test_timeout_retries_then_fails(self, server):
        server.script = ["slow"]
        gen, sleeps = client(server, timeout=0.05, attempts=2)
        with pytest.raises(BackendError, match="attempt 2/2"):
            gen.generate("seed text", "img", "CT")
        assert sleeps == [0.01]


class TestMalformedResponses:
    def test_missing_field_no_retry(self, server):
        server.script = ["missing-answer"]
        gen, _ = client(server)
        with pytest.raises(MalformedResponseError, match="'answer'"):
            gen.generate("seed text", "img", "CT")
        assert len(server.requests) == 1

    def test_non_json_body(self, server):
        server.script = ["not-json"]
        gen, _ = client(server)
        with pytest.raises(MalformedResponseError, match="not JSON"):
            gen.generate("seed text", "img", "CT")

    def test_malformed_is_a_backend_error(self):
        assert issubclass(MalformedResponseError, BackendError)


class TestConstruction:
    def test_bad_arguments_rejected(self):
        with pytest.raises(ValidationError):
            RemoteQaGenerator("")
        with pytest.raises(ValidationError):
            RemoteQaGenerator("http://x", attempts=0)
        with pytest.raises(ValidationError):
            RemoteQaGenerator("http://x", timeout=0.0)
