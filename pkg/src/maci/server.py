"""HTTP facade over the orchestrator and analysis engine.

Single integration surface for the CLI, the web UI, workers, and scripts.
All bodies are JSON in the canonical document form; every error body carries
``status``, ``code`` and ``message``. Routes live under /api/v1.
"""

from __future__ import annotations

import argparse
import json
import logging
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .analysis import AnalysisEngine, CubeQuery, Reducer
from .model import (
    ModelError,
    ParamValue,
    metric_from_doc,
    parameter_from_doc,
    provenance_from_doc,
    study_to_doc,
    template_to_doc,
    instance_to_doc,
)
from .orchestrator import Orchestrator, OrchestratorError, RetryPolicy, ValidationFailure
from .store import SchemaMismatchError, Store

log = logging.getLogger("maci.server")

API_PREFIX = "/api/v1"
REAP_INTERVAL_S = 5.0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(message)

    def body(self) -> bytes:
        return json.dumps(
            {"status": self.status, "code": self.code, "message": self.message}
        ).encode("utf-8")


def _tokens_from_file(path: str | None) -> dict[str, set[str]]:
    if not path:
        return {"operator": set(), "worker": set()}
    doc = json.loads(Path(path).read_text("utf-8"))
    return {
        "operator": set(doc.get("operator_tokens", [])),
        "worker": set(doc.get("worker_tokens", [])),
    }


class Api:
    """Transport-independent request handling; the HTTP layer stays thin."""

    # (method, regex, scope, handler name); scope: open | worker | operator
    ROUTES: list[tuple[str, str, str, str]] = [
        ("GET", r"^/health$", "open", "health"),
        ("POST", r"^/templates$", "operator", "create_template"),
        ("GET", r"^/templates$", "operator", "list_templates"),
        ("GET", r"^/templates/(?P<id>[^/]+)$", "operator", "get_template"),
        ("POST", r"^/studies$", "operator", "create_study"),
        ("GET", r"^/studies$", "operator", "list_studies"),
        ("POST", r"^/studies/(?P<id>[^/]+)/start$", "operator", "start_study"),
        ("POST", r"^/studies/(?P<id>[^/]+)/cancel$", "operator", "cancel_study"),
        ("GET", r"^/studies/(?P<id>[^/]+)/progress$", "operator", "progress"),
        ("GET", r"^/studies/(?P<id>[^/]+)/experiments$", "operator", "list_experiments"),
        ("GET", r"^/studies/(?P<id>[^/]+)/export$", "operator", "export"),
        ("GET", r"^/studies/(?P<id>[^/]+)/frame$", "operator", "frame"),
        ("GET", r"^/studies/(?P<id>[^/]+)$", "operator", "get_study"),
        ("POST", r"^/workers$", "worker", "register_worker"),
        ("GET", r"^/workers$", "operator", "list_workers"),
        ("POST", r"^/workers/(?P<id>[^/]+)/heartbeat$", "worker", "heartbeat"),
        ("POST", r"^/workers/(?P<id>[^/]+)/next$", "worker", "acquire_next"),
        ("POST", r"^/experiments/(?P<id>[^/]+)/started$", "worker", "report_started"),
        ("POST", r"^/experiments/(?P<id>[^/]+)/result$", "worker", "report_result"),
        ("POST", r"^/experiments/(?P<id>[^/]+)/metrics$", "worker", "ingest_metrics"),
        ("POST", r"^/experiments/(?P<id>[^/]+)/logs$", "worker", "ingest_logs"),
        ("GET", r"^/experiments/(?P<id>[^/]+)$", "operator", "drill_down"),
        ("POST", r"^/analysis/cube$", "operator", "cube"),
        ("POST", r"^/analysis/pareto$", "operator", "pareto"),
    ]

    def __init__(
        self,
        orchestrator: Orchestrator,
        engine: AnalysisEngine,
        tokens: dict[str, set[str]] | None = None,
    ):
        self.orch = orchestrator
        self.engine = engine
        self.tokens = tokens or {"operator": set(), "worker": set()}
        self._routes = [
            (method, re.compile(pattern), scope, getattr(self, name))
            for method, pattern, scope, name in self.ROUTES
        ]

    # -- dispatch ----------------------------------------------------------

    def handle(
        self, method: str, path: str, query: dict, body: bytes, headers: dict
    ) -> tuple[int, str, bytes]:
        """Returns (status, content_type, payload)."""
        if not path.startswith(API_PREFIX):
            raise ApiError(404, "not_found", f"unknown path {path!r}")
        sub = path[len(API_PREFIX) :] or "/"
        path_matched = False
        for route_method, pattern, scope, handler in self._routes:
            match = pattern.match(sub)
            if match is None:
                continue
            path_matched = True
            if route_method != method:
                continue
            self._authorize(scope, headers)
            doc = self._parse_body(body) if method == "POST" else None
            try:
                return handler(match.groupdict(), query, doc)
            except OrchestratorError as exc:
                raise ApiError(exc.http_status, exc.code, exc.message) from exc
            except ModelError as exc:
                raise ApiError(422, "validation", str(exc)) from exc
        if path_matched:
            raise ApiError(405, "method_not_allowed", f"{method} not allowed on {path}")
        raise ApiError(404, "not_found", f"unknown path {path!r}")

    def _authorize(self, scope: str, headers: dict) -> None:
        if scope == "open":
            return
        operator, worker = self.tokens["operator"], self.tokens["worker"]
        if not operator and not worker:
            return  # lab mode
        header = headers.get("authorization", "")
        token = header[7:] if header.lower().startswith("bearer ") else None
        if token is None:
            raise ApiError(401, "unauthorized", "missing bearer token")
        if token in operator:
            return
        if scope == "worker" and token in worker:
            return
        raise ApiError(401, "unauthorized", "invalid token for this endpoint")

    @staticmethod
    def _parse_body(body: bytes) -> dict:
        if not body:
            return {}
        try:
            doc = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError(400, "malformed_body", f"body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ApiError(400, "malformed_body", "body must be a JSON object")
        return doc

    @staticmethod
    def _json(doc, status: int = 200) -> tuple[int, str, bytes]:
        return status, "application/json", json.dumps(doc).encode("utf-8")

    # -- handlers -------------------------------------------------------------

    def health(self, params, query, doc):
        return self._json({"status": "ok"})

    def create_template(self, params, query, doc):
        template = self.orch.create_template(
            name=str(doc.get("name", "")),
            script=str(doc.get("script", "")),
            parameters=[parameter_from_doc(p) for p in doc.get("parameters", [])],
            declared_metrics=[metric_from_doc(m) for m in doc.get("declared_metrics", [])],
        )
        return self._json(template_to_doc(template), 201)

    def list_templates(self, params, query, doc):
        return self._json({"templates": [template_to_doc(t) for t in self.orch.list_templates()]})

    def get_template(self, params, query, doc):
        return self._json(template_to_doc(self.orch.get_template(params["id"])))

    def create_study(self, params, query, doc):
        raw_bound = doc.get("bound_values", {})
        if not isinstance(raw_bound, dict):
            raise ApiError(422, "validation", "bound_values must be an object")
        bound = {
            str(k): [ParamValue.of(v) for v in vs] for k, vs in raw_bound.items()
        }
        repetitions = doc.get("repetitions", 1)
        base_seed = doc.get("base_seed", 0)
        for name, value in (("repetitions", repetitions), ("base_seed", base_seed)):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ApiError(422, "validation", f"{name} must be an integer")
        study = self.orch.create_study(
            template_id=str(doc.get("template_id", "")),
            bound_values=bound,
            repetitions=repetitions,
            base_seed=base_seed,
            provenance=provenance_from_doc(doc.get("provenance")),
        )
        return self._json(study_to_doc(study), 201)

    def list_studies(self, params, query, doc):
        return self._json({"studies": [study_to_doc(s) for s in self.orch.list_studies()]})

    def get_study(self, params, query, doc):
        return self._json(study_to_doc(self.orch.get_study(params["id"])))

    def start_study(self, params, query, doc):
        return self._json(self.orch.start_study(params["id"]).to_doc())

    def cancel_study(self, params, query, doc):
        return self._json(self.orch.cancel_study(params["id"]).to_doc())

    def progress(self, params, query, doc):
        return self._json(self.orch.progress(params["id"]).to_doc())

    def list_experiments(self, params, query, doc):
        instances = self.orch.list_instances(params["id"])
        return self._json({"experiments": [instance_to_doc(i) for i in instances]})

    def export(self, params, query, doc):
        fmt = query.get("format", ["csv"])[0]
        include_failed = query.get("include_failed", ["false"])[0] == "true"
        payload = self.engine.export_frame(params["id"], fmt, include_failed=include_failed)
        content_type = "text/csv; charset=utf-8" if fmt == "csv" else "application/x-ndjson"
        return 200, content_type, payload

    def frame(self, params, query, doc):
        include_failed = query.get("include_failed", ["false"])[0] == "true"
        payload = self.engine.export_frame(
            params["id"], "jsonl", include_failed=include_failed
        )
        return 200, "application/x-ndjson", payload

    def register_worker(self, params, query, doc):
        labels = doc.get("labels", [])
        if not isinstance(labels, list) or not all(isinstance(l, str) for l in labels):
            raise ApiError(422, "validation", "labels must be a list of text tags")
        return self._json(self.orch.register_worker(labels).to_doc(), 201)

    def list_workers(self, params, query, doc):
        return self._json({"workers": [w.to_doc() for w in self.orch.list_workers()]})

    def heartbeat(self, params, query, doc):
        return self._json(self.orch.heartbeat(params["id"]).to_doc())

    def acquire_next(self, params, query, doc):
        grant = self.orch.acquire_next(params["id"])
        if grant is None:
            return 204, "application/json", b""
        return self._json(grant)

    def report_started(self, params, query, doc):
        self.orch.report_started(params["id"], str(doc.get("worker_id", "")))
        return self._json({"ok": True})

    def report_result(self, params, query, doc):
        outcome = doc.get("outcome")
        if outcome not in ("success", "failure"):
            raise ApiError(422, "validation", "outcome must be 'success' or 'failure'")
        final = self.orch.report_result(
            params["id"],
            str(doc.get("worker_id", "")),
            success=outcome == "success",
            detail=doc.get("detail"),
        )
        return self._json({"ok": True, "status": final.value})

    def ingest_metrics(self, params, query, doc):
        records = doc.get("records")
        if not isinstance(records, list):
            raise ApiError(422, "validation", "records must be a list")
        accepted = self.orch.ingest_metrics(params["id"], records)
        return self._json({"accepted": accepted})

    def ingest_logs(self, params, query, doc):
        records = doc.get("records")
        if not isinstance(records, list):
            raise ApiError(422, "validation", "records must be a list")
        accepted = self.orch.ingest_logs(params["id"], records)
        return self._json({"accepted": accepted})

    def drill_down(self, params, query, doc):
        return self._json(self.engine.drill_down(params["id"]))

    def cube(self, params, query, doc):
        cube_query = CubeQuery.from_doc(doc)
        groups = self.engine.cube(cube_query)
        return self._json({"groups": [g.to_doc() for g in groups]})

    def pareto(self, params, query, doc):
        reducer_map = {}
        for name, value in (doc.get("reducer_map") or {}).items():
            try:
                reducer_map[str(name)] = Reducer(value)
            except ValueError:
                raise ApiError(422, "validation", f"unknown reducer {value!r}") from None
        group_by = doc.get("group_by", [])
        if not isinstance(group_by, list):
            raise ApiError(422, "validation", "group_by must be a list")
        try:
            points = self.engine.pareto(
                study_id=str(doc.get("study_id", "")),
                metric_x=str(doc.get("metric_x", "")),
                dir_x=doc.get("dir_x"),
                metric_y=str(doc.get("metric_y", "")),
                dir_y=doc.get("dir_y"),
                group_by=tuple(str(g) for g in group_by),
                reducer_map=reducer_map,
            )
        except ValidationFailure as exc:
            raise ApiError(422, "validation", exc.message) from exc
        return self._json({"points": [p.to_doc() for p in points]})


class _Handler(BaseHTTPRequestHandler):
    server_version = "maci"
    protocol_version = "HTTP/1.1"

    def _run(self, method: str) -> None:
        service: Service = self.server.service  # type: ignore[attr-defined]
        parsed = urlparse(self.path)
        try:
            if parsed.path == "/" or parsed.path.startswith("/ui"):
                status, content_type, payload = service.serve_static(parsed.path)
            else:
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                headers = {k.lower(): v for k, v in self.headers.items()}
                status, content_type, payload = service.api.handle(
                    method, parsed.path, parse_qs(parsed.query), body, headers
                )
        except ApiError as exc:
            status, content_type, payload = exc.status, "application/json", exc.body()
        except Exception:  # pragma: no cover - last-resort guard
            log.exception("unhandled error for %s %s", method, self.path)
            payload = json.dumps(
                {"status": 500, "code": "internal", "message": "internal error"}
            ).encode("utf-8")
            status, content_type = 500, "application/json"
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload:
            self.wfile.write(payload)

    def do_GET(self):
        self._run("GET")

    def do_POST(self):
        self._run("POST")

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)


class Service:
    """Owns the store, orchestrator, analysis engine, HTTP server and reaper."""

    def __init__(
        self,
        data_dir: str | Path,
        host: str = "127.0.0.1",
        port: int = 8080,
        tokens_file: str | None = None,
        lease_duration_s: int = 600,
        max_attempts: int = 2,
        ui_dir: str | Path | None = None,
        reap_interval_s: float = REAP_INTERVAL_S,
    ):
        data_dir = Path(data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        self.store = Store(data_dir / "maci.db")
        policy = RetryPolicy(max_attempts=max_attempts, lease_duration_s=lease_duration_s)
        self.orch = Orchestrator(self.store, policy)
        self.engine = AnalysisEngine(self.store)
        self.api = Api(self.orch, self.engine, _tokens_from_file(tokens_file))
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.reap_interval_s = reap_interval_s
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.service = self  # type: ignore[attr-defined]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def serve_static(self, path: str) -> tuple[int, str, bytes]:
        if self.ui_dir is None:
            raise ApiError(404, "not_found", "no UI assets configured (--ui-dir)")
        rel = path[len("/ui") :].lstrip("/") if path.startswith("/ui") else ""
        target = (self.ui_dir / (rel or "index.html")).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            target = self.ui_dir / "index.html"
            if not target.is_file():
                raise ApiError(404, "not_found", f"no asset {path!r}")
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        return 200, content_type, target.read_bytes()

    def _reap_loop(self) -> None:
        while not self._stop.wait(self.reap_interval_s):
            try:
                self.orch.reap()
            except Exception:  # pragma: no cover
                log.exception("reap pass failed")

    def start(self) -> None:
        server_thread = threading.Thread(
            target=self._httpd.serve_forever, name="maci-http", daemon=True
        )
        reap_thread = threading.Thread(target=self._reap_loop, name="maci-reap", daemon=True)
        self._threads = [server_thread, reap_thread]
        for t in self._threads:
            t.start()
        log.info("serving on port %d", self.port)

    def stop(self) -> None:
        self._stop.set()
        self._httpd.shutdown()
        self._httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self.store.close()

    def run_forever(self) -> None:
        self.start()
        try:
            self._stop.wait()
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="maci-server", description=__doc__)
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--host", default="0.0.0.0")
    parser.add_argument("--data-dir", default="./maci-data")
    parser.add_argument("--tokens-file", default=None)
    parser.add_argument("--lease-duration-s", type=int, default=600)
    parser.add_argument("--max-attempts", type=int, default=2)
    parser.add_argument("--ui-dir", default=None)
    parser.add_argument("--reap-interval-s", type=float, default=REAP_INTERVAL_S)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        service = Service(
            data_dir=args.data_dir,
            host=args.host,
            port=args.port,
            tokens_file=args.tokens_file,
            lease_duration_s=args.lease_duration_s,
            max_attempts=args.max_attempts,
            ui_dir=args.ui_dir,
            reap_interval_s=args.reap_interval_s,
        )
    except SchemaMismatchError as exc:
        print(f"refusing to start: {exc}")
        return 1
    except OSError as exc:
        print(f"startup failed: {exc}")
        return 1
    print(f"maci-server listening on {args.host}:{service.port}")
    service.run_forever()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
