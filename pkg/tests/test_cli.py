import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from maci.cli import EXIT_API_ERROR, EXIT_OK, EXIT_USAGE, main
from maci.client import ApiClient
from maci.demo import demo_path
from maci.server import Api, Service


@pytest.fixture
def service(tmp_path):
    svc = Service(data_dir=tmp_path / "data", port=0, reap_interval_s=0.5)
    svc.start()
    yield svc
    svc.stop()


@pytest.fixture
def endpoint(service):
    return f"http://127.0.0.1:{service.port}"


def run_cli(endpoint, *argv):
    return main(["--endpoint", endpoint, *argv])


def finish_all(endpoint, study_id, metric_values):
    client = ApiClient(endpoint)
    worker = client.register_worker([])
    values = iter(metric_values)
    while True:
        grant = client.acquire_next(worker["id"])
        if grant is None:
            break
        exp_id = grant["experiment"]["id"]
        client.report_started(exp_id, worker["id"])
        for metric, value in next(values).items():
            client.post_metrics(exp_id, [{"metric": metric, "value": value}])
        client.report_result(exp_id, worker["id"], True)


STUDY_FILE = {
    "template": {
        "name": "cli-demo",
        "script": "#!/bin/sh\nexit 0\n",
        "parameters": [
            {"name": "p", "kind": "configuration", "values": ["a", "b"]},
            {"name": "n", "kind": "configuration", "values": [1, 2, 3]},
        ],
        "declared_metrics": [
            {"name": "speed", "direction": "maximize"},
            {"name": "price", "direction": "minimize"},
        ],
    },
    "study": {"repetitions": 2, "base_seed": 3},
}


@pytest.fixture
def study_file(tmp_path):
    path = tmp_path / "demo.study.json"
    path.write_text(json.dumps(STUDY_FILE))
    return path


def create_study(endpoint, study_file, capsys):
    assert run_cli(endpoint, "study", "create", str(study_file)) == EXIT_OK
    out = capsys.readouterr().out.strip().split("\n")
    return out[0], out


def test_study_create_prints_id_count_and_duration(endpoint, study_file, capsys):
    code = run_cli(
        endpoint,
        "study",
        "create",
        str(study_file),
        "--per-experiment-s",
        "120",
        "--workers",
        "4",
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    lines = out.strip().split("\n")
    assert lines[1] == "12 experiments"
    assert "estimated duration: 360 s" in lines[2]


def test_table1_demo_study_create_reports_1800(endpoint, capsys):
    code = run_cli(
        endpoint,
        "study",
        "create",
        str(demo_path("dash_study.json")),
        "--per-experiment-s",
        "120",
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "1800 experiments" in out
    assert "estimated duration: 216000 s" in out
    assert "60.0 h" in out


def test_study_lifecycle_watch_exit_codes(endpoint, study_file, capsys):
    study_id, _ = create_study(endpoint, study_file, capsys)
    assert run_cli(endpoint, "study", "start", study_id) == EXIT_OK
    capsys.readouterr()

    finish_all(
        endpoint,
        study_id,
        [{"speed": float(i), "price": float(-i)} for i in range(12)],
    )
    assert run_cli(endpoint, "study", "watch", study_id, "--interval", "0.05") == EXIT_OK
    out = capsys.readouterr().out
    assert "finished=12" in out


def test_watch_canceled_exits_2(endpoint, study_file, capsys):
    study_id, _ = create_study(endpoint, study_file, capsys)
    run_cli(endpoint, "study", "start", study_id)
    run_cli(endpoint, "study", "cancel", study_id)
    capsys.readouterr()
    assert run_cli(endpoint, "study", "watch", study_id, "--interval", "0.05") == 2


def test_watch_failures_exit_3(endpoint, study_file, capsys):
    study_id, _ = create_study(endpoint, study_file, capsys)
    run_cli(endpoint, "study", "start", study_id)
    capsys.readouterr()
    client = ApiClient(endpoint)
    worker = client.register_worker([])
    while True:
        grant = client.acquire_next(worker["id"])
        if grant is None:
            break
        exp_id = grant["experiment"]["id"]
        client.report_started(exp_id, worker["id"])
        client.report_result(exp_id, worker["id"], False, "exit_code=1")
    assert run_cli(endpoint, "study", "watch", study_id, "--interval", "0.05") == 3


def test_export_matches_api_bytes(endpoint, study_file, tmp_path, capsys):
    study_id, _ = create_study(endpoint, study_file, capsys)
    run_cli(endpoint, "study", "start", study_id)
    finish_all(endpoint, study_id, [{"speed": 1.0, "price": 2.0}] * 12)
    out_path = tmp_path / "frame.csv"
    assert run_cli(endpoint, "export", study_id, "--format", "csv", "--out", str(out_path)) == EXIT_OK
    api_bytes = ApiClient(endpoint).export(study_id, "csv")
    assert out_path.read_bytes() == api_bytes


def test_cube_renders_table(endpoint, study_file, capsys):
    study_id, _ = create_study(endpoint, study_file, capsys)
    run_cli(endpoint, "study", "start", study_id)
    finish_all(endpoint, study_id, [{"speed": float(i % 3), "price": 1.0} for i in range(12)])
    capsys.readouterr()
    code = run_cli(
        endpoint, "cube", study_id, "--metric", "speed", "--group-by", "p",
        "--filter", "n=1",
    )
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "count" in out and "median" in out
    assert out.count("\n") >= 4  # header + rule + 2 groups


def test_pareto_renders_frontier_flags(endpoint, study_file, capsys):
    study_id, _ = create_study(endpoint, study_file, capsys)
    run_cli(endpoint, "study", "start", study_id)
    finish_all(
        endpoint,
        study_id,
        [{"speed": float(i), "price": float(12 - i)} for i in range(12)],
    )
    capsys.readouterr()
    assert run_cli(endpoint, "pareto", study_id, "--x", "speed:max", "--y", "price:min") == EXIT_OK
    out = capsys.readouterr().out
    assert "*" in out


def test_worker_list(endpoint, capsys):
    ApiClient(endpoint).register_worker(["gpu", "mininet"])
    assert run_cli(endpoint, "worker", "list") == EXIT_OK
    out = capsys.readouterr().out
    assert "gpu,mininet" in out
    assert "idle" in out


def test_api_error_exit_code(endpoint, capsys):
    assert run_cli(endpoint, "study", "start", "missing-id") == EXIT_API_ERROR
    err = capsys.readouterr().err
    assert "unknown_study" in err


def test_usage_error_exit_64(endpoint, capsys):
    assert run_cli(endpoint, "study") == EXIT_USAGE
    assert run_cli(endpoint, "export") == EXIT_USAGE
    assert run_cli(endpoint, "cube", "x") == EXIT_USAGE  # missing --metric
    assert main(["study", "start", "x"]) == EXIT_USAGE  # no endpoint anywhere


def test_json_output_mode(endpoint, study_file, capsys):
    assert run_cli(endpoint, "--json", "study", "create", str(study_file)) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["experiments"] == 12
    assert doc["study"]["id"]


# -- endpoint discipline: every subcommand speaks documented routes only -----------


class RecordingHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    CANNED = {
        ("POST", "/api/v1/templates"): {
            "id": "T",
            "name": "x",
            "script": "s",
            "parameters": [{"name": "p", "kind": "configuration", "values": [1]}],
            "declared_metrics": [],
            "created_at": "1970-01-01T00:00:00.000000Z",
        },
        ("POST", "/api/v1/studies"): {
            "id": "S",
            "template_id": "T",
            "bound_values": {"p": [1]},
            "repetitions": 1,
            "base_seed": 0,
            "provenance": {},
            "status": "draft",
            "created_at": "1970-01-01T00:00:00.000000Z",
        },
        ("POST", "/api/v1/studies/S/start"): {
            "study_id": "S",
            "status": "running",
            "counts": {"pending": 1, "leased": 0, "running": 0, "finished": 0, "failed": 0, "canceled": 0},
            "total": 1,
            "throughput_per_min": 0.0,
            "eta_s": None,
        },
        ("POST", "/api/v1/studies/S/cancel"): {
            "study_id": "S",
            "status": "canceled",
            "counts": {"pending": 0, "leased": 0, "running": 0, "finished": 0, "failed": 0, "canceled": 1},
            "total": 1,
            "throughput_per_min": 0.0,
            "eta_s": None,
        },
        ("GET", "/api/v1/studies/S/progress"): {
            "study_id": "S",
            "status": "finished",
            "counts": {"pending": 0, "leased": 0, "running": 0, "finished": 1, "failed": 0, "canceled": 0},
            "total": 1,
            "throughput_per_min": 1.0,
            "eta_s": None,
        },
        ("GET", "/api/v1/studies/S/export"): "p,repetition_index,status\n",
        ("POST", "/api/v1/analysis/cube"): {"groups": []},
        ("POST", "/api/v1/analysis/pareto"): {"points": []},
        ("GET", "/api/v1/workers"): {"workers": []},
    }

    def _serve(self, method):
        path = self.path.split("?")[0]
        self.server.seen.append((method, path))
        doc = self.CANNED.get((method, path))
        if doc is None:
            payload = json.dumps({"status": 404, "code": "not_found", "message": path}).encode()
            status = 404
        else:
            payload = (doc if isinstance(doc, str) else json.dumps(doc)).encode()
            status = 200
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        self._serve("GET")

    def do_POST(self):
        length = int(self.headers.get("Content-Length") or 0)
        if length:
            self.rfile.read(length)
        self._serve("POST")

    def log_message(self, fmt, *args):
        pass


def test_cli_speaks_only_documented_routes(tmp_path, study_file, capsys):
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), RecordingHandler)
    httpd.seen = []
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    endpoint = f"http://127.0.0.1:{httpd.server_address[1]}"
    try:
        run_cli(endpoint, "template", "push", str(study_file))
        run_cli(endpoint, "study", "create", str(study_file))
        run_cli(endpoint, "study", "start", "S")
        run_cli(endpoint, "study", "cancel", "S")
        run_cli(endpoint, "study", "watch", "S", "--interval", "0.01")
        run_cli(endpoint, "export", "S", "--format", "csv")
        run_cli(endpoint, "cube", "S", "--metric", "m")
        run_cli(endpoint, "pareto", "S", "--x", "a:max", "--y", "b:min")
        run_cli(endpoint, "worker", "list")
        capsys.readouterr()
    finally:
        httpd.shutdown()
        httpd.server_close()

    documented = set()
    for method, pattern, _scope, _name in Api.ROUTES:
        regex = pattern.strip("^$").replace("(?P<id>[^/]+)", "[^/]+")
        documented.add((method, "/api/v1" + regex))
    import re

    for method, path in httpd.seen:
        assert any(
            m == method and re.fullmatch(exp, path) for m, exp in documented
        ), f"CLI used undocumented route {method} {path}"
