import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

import maci_sdk
from maci_sdk import NotInExperimentError, log, params, record, seed


@pytest.fixture
def experiment_env(tmp_path, monkeypatch):
    doc = {
        "experiment_id": "exp-1",
        "seed": 987654321,
        "params": {"x": 2, "rate": 0.5, "label": "fast", "debug": True},
    }
    path = tmp_path / "params.json"
    path.write_text(json.dumps(doc))
    monkeypatch.setenv("MACI_PARAMS_FILE", str(path))
    return doc


class _Sink(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = json.loads(self.rfile.read(length))
        self.server.received.append((self.path, body))
        self.send_response(204)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def log_message(self, fmt, *args):
        pass


@pytest.fixture
def sink(monkeypatch):
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), _Sink)
    httpd.received = []
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    monkeypatch.setenv("MACI_REPORT_URL", f"http://127.0.0.1:{httpd.server_address[1]}")
    yield httpd
    httpd.shutdown()
    httpd.server_close()


def test_params_preserve_types(experiment_env):
    got = params()
    assert got == {"x": 2, "rate": 0.5, "label": "fast", "debug": True}
    assert isinstance(got["debug"], bool)
    assert isinstance(got["x"], int)


def test_seed_and_experiment_id(experiment_env):
    assert seed() == 987654321
    assert maci_sdk.experiment_id() == "exp-1"


def test_missing_env_raises_context_error(monkeypatch):
    monkeypatch.delenv("MACI_PARAMS_FILE", raising=False)
    with pytest.raises(NotInExperimentError):
        params()
    monkeypatch.delenv("MACI_REPORT_URL", raising=False)
    with pytest.raises(NotInExperimentError):
        record("m", 1)


def test_record_posts_metric(experiment_env, sink):
    record("stallings", 2)
    assert sink.received == [("/metric", {"metric": "stallings", "value": 2.0})]


def test_log_posts_record(experiment_env, sink):
    log("warn", "buffer underrun")
    assert sink.received == [("/log", {"level": "warn", "message": "buffer underrun"})]


def test_local_rejection_before_send(sink, experiment_env):
    with pytest.raises(ValueError):
        record("1bad", 2)
    with pytest.raises(ValueError):
        record("ok", float("nan"))
    with pytest.raises(ValueError):
        record("ok", "high")
    with pytest.raises(ValueError):
        log("silly", "x")
    assert sink.received == []


def test_record_retries_then_raises_on_dead_endpoint(monkeypatch):
    monkeypatch.setenv("MACI_REPORT_URL", "http://127.0.0.1:1")  # nothing listens
    monkeypatch.setattr(maci_sdk, "_RETRY_WINDOW_S", 0.4)
    started = time.monotonic()
    with pytest.raises(OSError):
        record("m", 1.0)
    assert time.monotonic() - started >= 0.3  # it did retry for a while


def test_sdk_script_runs_under_worker(tmp_path):
    from maci.client import ApiClient
    from maci.executor import ExecutorAgent
    from maci.server import Service
    from pathlib import Path
    import os

    sdk_src = str(Path(__file__).resolve().parent.parent / "src")
    script = (
        "#!/usr/bin/env python3\n"
        "from maci_sdk import params, record, log\n"
        "p = params()\n"
        "record('doubled', 2 * p['x'])\n"
        "log('info', 'done')\n"
    )
    svc = Service(data_dir=tmp_path / "data", port=0, reap_interval_s=0.5)
    svc.start()
    client = ApiClient(f"http://127.0.0.1:{svc.port}")
    old_pythonpath = os.environ.get("PYTHONPATH")
    os.environ["PYTHONPATH"] = sdk_src + os.pathsep + (old_pythonpath or "")
    try:
        template = client.push_template(
            {
                "name": "sdk-integration",
                "script": script,
                "parameters": [
                    {"name": "x", "kind": "configuration", "values": [3]}
                ],
                "declared_metrics": [{"name": "doubled", "direction": "neutral"}],
            }
        )
        study = client.create_study(
            {
                "template_id": template["id"],
                "bound_values": {"x": [3]},
                "repetitions": 1,
                "base_seed": 0,
            }
        )
        client.start_study(study["id"])
        agent = ExecutorAgent(
            endpoint=f"http://127.0.0.1:{svc.port}", data_dir=tmp_path / "work"
        )
        agent.register()
        agent.relay.start()
        grant = client.acquire_next(agent.worker_id)
        outcome = agent.execute_one(grant)
        assert outcome.success
        bundle = client.drill_down(grant["experiment"]["id"])
        assert [r["value"] for r in bundle["metrics"] if r["metric"] == "doubled"] == [6.0]
        assert [l["message"] for l in bundle["logs"]] == ["done"]
        agent.relay.stop()
    finally:
        if old_pythonpath is None:
            os.environ.pop("PYTHONPATH", None)
        else:
            os.environ["PYTHONPATH"] = old_pythonpath
        svc.stop()
