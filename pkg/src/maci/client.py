"""Thin HTTP client for the service API, shared by the CLI and the worker agent."""

from __future__ import annotations

import json
import urllib.error
import urllib.request


class ApiClientError(Exception):
    """Server answered with an error body (4xx/5xx)."""

    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(f"{status} {code}: {message}")


class ConnectionFailed(Exception):
    """The service could not be reached at all."""


class ApiClient:
    def __init__(self, endpoint: str, token: str | None = None, timeout: float = 30.0):
        self.base = endpoint.rstrip("/")
        if not self.base.endswith("/api/v1"):
            self.base += "/api/v1"
        self.token = token
        self.timeout = timeout

    def _request(self, method: str, path: str, doc: dict | None = None) -> tuple[int, bytes]:
        url = self.base + path
        data = json.dumps(doc).encode("utf-8") if doc is not None else None
        request = urllib.request.Request(url, data=data, method=method)
        request.add_header("Content-Type", "application/json")
        if self.token:
            request.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                return response.status, response.read()
        except urllib.error.HTTPError as exc:
            body = exc.read()
            try:
                parsed = json.loads(body.decode("utf-8"))
                raise ApiClientError(
                    exc.code, parsed.get("code", "error"), parsed.get("message", "")
                ) from None
            except (ValueError, KeyError):
                raise ApiClientError(exc.code, "error", body.decode("utf-8", "replace")) from None
        except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
            raise ConnectionFailed(str(exc)) from exc

    def get_json(self, path: str) -> dict:
        _, body = self._request("GET", path)
        return json.loads(body.decode("utf-8"))

    def get_bytes(self, path: str) -> bytes:
        _, body = self._request("GET", path)
        return body

    def post(self, path: str, doc: dict | None = None) -> dict | None:
        status, body = self._request("POST", path, doc if doc is not None else {})
        if status == 204 or not body:
            return None
        return json.loads(body.decode("utf-8"))

    # -- convenience wrappers --------------------------------------------------

    def health(self) -> dict:
        return self.get_json("/health")

    def push_template(self, doc: dict) -> dict:
        return self.post("/templates", doc)

    def get_template(self, template_id: str) -> dict:
        return self.get_json(f"/templates/{template_id}")

    def create_study(self, doc: dict) -> dict:
        return self.post("/studies", doc)

    def get_study(self, study_id: str) -> dict:
        return self.get_json(f"/studies/{study_id}")

    def start_study(self, study_id: str) -> dict:
        return self.post(f"/studies/{study_id}/start")

    def cancel_study(self, study_id: str) -> dict:
        return self.post(f"/studies/{study_id}/cancel")

    def progress(self, study_id: str) -> dict:
        return self.get_json(f"/studies/{study_id}/progress")

    def export(self, study_id: str, fmt: str) -> bytes:
        return self.get_bytes(f"/studies/{study_id}/export?format={fmt}")

    def register_worker(self, labels: list[str]) -> dict:
        return self.post("/workers", {"labels": labels})

    def list_workers(self) -> list[dict]:
        return self.get_json("/workers")["workers"]

    def heartbeat(self, worker_id: str) -> dict:
        return self.post(f"/workers/{worker_id}/heartbeat")

    def acquire_next(self, worker_id: str) -> dict | None:
        return self.post(f"/workers/{worker_id}/next")

    def report_started(self, experiment_id: str, worker_id: str) -> None:
        self.post(f"/experiments/{experiment_id}/started", {"worker_id": worker_id})

    def report_result(
        self, experiment_id: str, worker_id: str, success: bool, detail: str | None = None
    ) -> dict:
        doc = {"worker_id": worker_id, "outcome": "success" if success else "failure"}
        if detail is not None:
            doc["detail"] = detail
        return self.post(f"/experiments/{experiment_id}/result", doc)

    def post_metrics(self, experiment_id: str, records: list[dict]) -> dict:
        return self.post(f"/experiments/{experiment_id}/metrics", {"records": records})

    def post_logs(self, experiment_id: str, records: list[dict]) -> dict:
        return self.post(f"/experiments/{experiment_id}/logs", {"records": records})

    def drill_down(self, experiment_id: str) -> dict:
        return self.get_json(f"/experiments/{experiment_id}")

    def cube(self, query_doc: dict) -> dict:
        return self.post("/analysis/cube", query_doc)

    def pareto(self, query_doc: dict) -> dict:
        return self.post("/analysis/pareto", query_doc)
