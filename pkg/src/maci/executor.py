"""Worker agent: polls for work, runs study scripts, relays records and results.

One experiment runs at a time. Each attempt gets a fresh workspace with the
parameter document at params.json and the script body at ./experiment; the
subprocess sees MACI_EXPERIMENT_ID, MACI_SEED, MACI_PARAMS_FILE,
MACI_REPORT_URL and one MACI_PARAM_<name> variable per parameter. Scripts
post metric/log records to the agent's local ingestion endpoint, which
forwards them and buffers across transient orchestrator outages.
"""

from __future__ import annotations

import argparse
import collections
import json
import logging
import math
import os
import shutil
import signal
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .client import ApiClient, ApiClientError, ConnectionFailed
from .model import IDENTIFIER_RE, ParamValue

log = logging.getLogger("maci.executor")

RELAY_BUFFER_LIMIT = 10_000
TIMEOUT_GRACE_S = 30.0
BACKOFF_START_S = 1.0
BACKOFF_CAP_S = 60.0


@dataclass(frozen=True)
class WorkspaceLayout:
    root: Path
    parameters_file: Path
    script_file: Path
    stdout_file: Path
    stderr_file: Path


@dataclass(frozen=True)
class ExecutionOutcome:
    exit_code: int
    duration_ms: int
    timed_out: bool

    @property
    def success(self) -> bool:
        return self.exit_code == 0 and not self.timed_out

    @property
    def detail(self) -> str | None:
        if self.timed_out:
            return "timed_out"
        if self.exit_code != 0:
            return f"exit_code={self.exit_code}"
        return None


class RecordRelay:
    """Local HTTP ingestion endpoint plus store-and-forward buffer.

    Scripts POST /metric and /log here; accepted records are forwarded to the
    orchestrator in batches. During orchestrator outages up to
    RELAY_BUFFER_LIMIT records are held (oldest dropped beyond that).
    """

    def __init__(self, client: ApiClient, flush_interval_s: float = 0.2):
        self.client = client
        self.flush_interval_s = flush_interval_s
        self._buffer: collections.deque = collections.deque()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._wake = threading.Event()
        self._experiment_id: str | None = None
        self._started_monotonic: float | None = None
        relay = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def do_POST(self):
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                status = relay.accept(self.path, body)
                self.send_response(status)
                self.send_header("Content-Length", "0")
                self.end_headers()

            def log_message(self, fmt, *args):
                log.debug("relay: " + fmt, *args)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._threads = [
            threading.Thread(target=self._httpd.serve_forever, daemon=True),
            threading.Thread(target=self._flush_loop, daemon=True),
        ]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self._httpd.server_address[1]}"

    def start(self) -> None:
        for t in self._threads:
            t.start()

    def stop(self) -> None:
        self._stop.set()
        self._wake.set()
        self._httpd.shutdown()
        self._httpd.server_close()

    def begin_experiment(self, experiment_id: str) -> None:
        with self._lock:
            self._experiment_id = experiment_id
            self._started_monotonic = time.monotonic()

    def end_experiment(self) -> None:
        with self._lock:
            self._experiment_id = None
            self._started_monotonic = None

    # -- ingestion ---------------------------------------------------------

    def accept(self, path: str, body: bytes) -> int:
        with self._lock:
            experiment_id = self._experiment_id
            started = self._started_monotonic
        if experiment_id is None:
            log.warning("relay: record received outside an experiment, rejected")
            return 409
        try:
            doc = json.loads(body.decode("utf-8"))
            if not isinstance(doc, dict):
                raise ValueError("body must be an object")
        except (ValueError, UnicodeDecodeError) as exc:
            log.warning("relay: malformed record rejected: %s", exc)
            return 400
        offset = doc.get("wall_offset_ms")
        if offset is None:
            offset = int((time.monotonic() - started) * 1000)
        if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
            log.warning("relay: bad wall_offset_ms rejected: %r", offset)
            return 400

        if path == "/metric":
            name = doc.get("metric")
            value = doc.get("value")
            if not isinstance(name, str) or not IDENTIFIER_RE.match(name):
                log.warning("relay: bad metric name rejected: %r", name)
                return 400
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                log.warning("relay: non-numeric metric value rejected: %r", value)
                return 400
            if not math.isfinite(float(value)):
                log.warning("relay: non-finite metric value rejected")
                return 400
            record = {"metric": name, "value": float(value), "wall_offset_ms": offset}
            self._enqueue(("metric", experiment_id, record))
            return 204
        if path == "/log":
            level = doc.get("level", "info")
            message = doc.get("message")
            if level not in ("info", "warn", "error") or not isinstance(message, str):
                log.warning("relay: malformed log record rejected")
                return 400
            record = {"level": level, "message": message, "wall_offset_ms": offset}
            self._enqueue(("log", experiment_id, record))
            return 204
        return 404

    def _enqueue(self, item) -> None:
        with self._lock:
            if len(self._buffer) >= RELAY_BUFFER_LIMIT:
                self._buffer.popleft()
                log.warning("relay: buffer full, dropped oldest record")
            self._buffer.append(item)
        self._wake.set()

    # -- forwarding -----------------------------------------------------------

    def _drain(self) -> list:
        with self._lock:
            items = list(self._buffer)
            self._buffer.clear()
        return items

    def _requeue(self, items: list) -> None:
        with self._lock:
            for item in reversed(items):
                self._buffer.appendleft(item)

    def _forward(self, items: list) -> None:
        """Push one batch per (kind, experiment) run; raises ConnectionFailed."""
        index = 0
        while index < len(items):
            kind, experiment_id, _ = items[index]
            batch = []
            while index < len(items) and items[index][0] == kind and items[index][1] == experiment_id:
                batch.append(items[index][2])
                index += 1
            try:
                if kind == "metric":
                    self.client.post_metrics(experiment_id, batch)
                else:
                    self.client.post_logs(experiment_id, batch)
            except ApiClientError as exc:
                # Server refused the records (experiment terminal, validation);
                # they can never be delivered, so drop them.
                log.warning(
                    "relay: server rejected %d %s record(s) for %s: %s",
                    len(batch),
                    kind,
                    experiment_id,
                    exc,
                )
            except ConnectionFailed:
                self._requeue(items[index - len(batch) :])
                raise

    def _flush_loop(self) -> None:
        while not self._stop.is_set():
            self._wake.wait(self.flush_interval_s)
            self._wake.clear()
            items = self._drain()
            if not items:
                continue
            try:
                self._forward(items)
            except ConnectionFailed:
                self._stop.wait(1.0)

    def flush(self, deadline_s: float = 120.0) -> bool:
        """Blocking flush of everything buffered; True when fully delivered."""
        deadline = time.monotonic() + deadline_s
        backoff = BACKOFF_START_S
        while time.monotonic() < deadline:
            items = self._drain()
            if not items:
                return True
            try:
                self._forward(items)
            except ConnectionFailed:
                time.sleep(min(backoff, max(0.0, deadline - time.monotonic())))
                backoff = min(backoff * 2, BACKOFF_CAP_S)
        with self._lock:
            return not self._buffer


class ExecutorAgent:
    def __init__(
        self,
        endpoint: str,
        labels: list[str] | None = None,
        poll_interval_s: float = 2.0,
        data_dir: str | Path | None = None,
        retain_workspaces: bool = False,
        token: str | None = None,
    ):
        self.client = ApiClient(endpoint, token=token)
        self.labels = labels or []
        self.poll_interval_s = poll_interval_s
        self.data_dir = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix="maci-work-"))
        self.retain_workspaces = retain_workspaces
        self.worker_id: str | None = None
        self.relay = RecordRelay(self.client)
        self._stop = threading.Event()
        self._abort_current = threading.Event()
        self._current_experiment: str | None = None
        self._state_lock = threading.Lock()
        self._heartbeat_thread: threading.Thread | None = None
        self.heartbeat_interval_s = 10.0

    # -- lifecycle ------------------------------------------------------------

    def stop(self) -> None:
        """Request shutdown; an in-flight experiment still completes and reports."""
        self._stop.set()

    def abort_current(self) -> None:
        self._abort_current.set()

    def register(self) -> str:
        backoff = BACKOFF_START_S
        while not self._stop.is_set():
            try:
                worker = self.client.register_worker(self.labels)
                self.worker_id = worker["id"]
                log.info("registered as worker %s", self.worker_id)
                return self.worker_id
            except (ConnectionFailed, ApiClientError) as exc:
                log.warning("registration failed (%s), retrying in %.0fs", exc, backoff)
                self._stop.wait(backoff)
                backoff = min(backoff * 2, BACKOFF_CAP_S)
        raise RuntimeError("shutdown before registration completed")

    def _heartbeat_loop(self) -> None:
        while not self._stop.wait(self.heartbeat_interval_s):
            try:
                info = self.client.heartbeat(self.worker_id)
            except (ConnectionFailed, ApiClientError):
                continue
            with self._state_lock:
                running = self._current_experiment
            if running and info.get("current_experiment") != running:
                log.warning("lease for %s revoked; aborting the run", running)
                self._abort_current.set()

    def run_loop(self) -> None:
        """Poll/execute until stop() is called; survives orchestrator outages."""
        self.register()
        self.relay.start()
        self._heartbeat_thread = threading.Thread(target=self._heartbeat_loop, daemon=True)
        self._heartbeat_thread.start()
        backoff = BACKOFF_START_S
        try:
            while not self._stop.is_set():
                try:
                    grant = self.client.acquire_next(self.worker_id)
                    backoff = BACKOFF_START_S
                except ConnectionFailed as exc:
                    log.warning("orchestrator unreachable (%s); backing off %.0fs", exc, backoff)
                    self._stop.wait(backoff)
                    backoff = min(backoff * 2, BACKOFF_CAP_S)
                    continue
                except ApiClientError as exc:
                    if exc.code == "unknown_worker":
                        log.warning("server lost this worker; re-registering")
                        self.register()
                        continue
                    if exc.code == "worker_busy":
                        # a stale lease from a previous life; wait for the reaper
                        self._stop.wait(self.poll_interval_s)
                        continue
                    raise
                if grant is None:
                    self._stop.wait(self.poll_interval_s)
                    continue
                self.execute_one(grant)
        finally:
            self.relay.stop()

    # -- one experiment ------------------------------------------------------------

    def _workspace(self, experiment_id: str, attempt: int) -> WorkspaceLayout:
        safe_id = experiment_id.replace("/", "_")
        root = self.data_dir / f"{safe_id}-attempt{attempt}"
        if root.exists():
            shutil.rmtree(root)
        root.mkdir(parents=True)
        return WorkspaceLayout(
            root=root,
            parameters_file=root / "params.json",
            script_file=root / "experiment",
            stdout_file=root / "stdout.log",
            stderr_file=root / "stderr.log",
        )

    def _environment(self, grant: dict, workspace: WorkspaceLayout) -> dict:
        params_doc = grant["params_document"]
        env = dict(os.environ)
        env["MACI_EXPERIMENT_ID"] = params_doc["experiment_id"]
        env["MACI_SEED"] = str(params_doc["seed"])
        env["MACI_PARAMS_FILE"] = str(workspace.parameters_file)
        env["MACI_REPORT_URL"] = self.relay.url
        for name, raw in params_doc["params"].items():
            env[f"MACI_PARAM_{name}"] = ParamValue.of(raw).canonical_text
        return env

    def execute_one(self, grant: dict) -> ExecutionOutcome:
        experiment_id = grant["experiment"]["id"]
        attempt = grant["experiment"]["attempt"]
        lease = grant["lease"]
        timeout_s = max(1.0, (lease["expires_at"] - lease["granted_at"]) - TIMEOUT_GRACE_S)

        workspace = self._workspace(experiment_id, attempt)
        workspace.parameters_file.write_text(
            json.dumps(grant["params_document"], indent=2) + "\n", "utf-8"
        )
        workspace.script_file.write_text(grant["script"], "utf-8")
        workspace.script_file.chmod(0o755)

        self._abort_current.clear()
        with self._state_lock:
            self._current_experiment = experiment_id
        self.relay.begin_experiment(experiment_id)
        try:
            try:
                self.client.report_started(experiment_id, self.worker_id)
            except ApiClientError as exc:
                log.warning("report_started refused (%s); abandoning %s", exc, experiment_id)
                return ExecutionOutcome(exit_code=-1, duration_ms=0, timed_out=False)
            except ConnectionFailed:
                # orchestrator briefly away; the lease is ours, keep going
                log.warning("report_started did not reach the orchestrator; continuing")

            outcome = self._run_script(workspace, self._environment(grant, workspace), timeout_s)
            self.relay.flush()
            self._deliver_result(experiment_id, outcome)
            return outcome
        finally:
            self.relay.end_experiment()
            with self._state_lock:
                self._current_experiment = None
            if not self.retain_workspaces:
                shutil.rmtree(workspace.root, ignore_errors=True)

    def _run_script(
        self, workspace: WorkspaceLayout, env: dict, timeout_s: float
    ) -> ExecutionOutcome:
        started = time.monotonic()
        try:
            with open(workspace.stdout_file, "wb") as out, open(
                workspace.stderr_file, "wb"
            ) as err:
                process = subprocess.Popen(
                    [str(workspace.script_file)],
                    cwd=str(workspace.root),
                    env=env,
                    stdout=out,
                    stderr=err,
                    start_new_session=True,
                )
                timed_out = False
                deadline = started + timeout_s
                while process.poll() is None:
                    if time.monotonic() >= deadline or self._abort_current.is_set():
                        timed_out = time.monotonic() >= deadline
                        self._terminate_tree(process)
                        break
                    time.sleep(0.05)
                process.wait()
                exit_code = process.returncode
        except OSError as exc:
            log.error("spawn failure: %s", exc)
            return ExecutionOutcome(
                exit_code=-1,
                duration_ms=int((time.monotonic() - started) * 1000),
                timed_out=False,
            )
        return ExecutionOutcome(
            exit_code=exit_code,
            duration_ms=int((time.monotonic() - started) * 1000),
            timed_out=timed_out,
        )

    @staticmethod
    def _terminate_tree(process: subprocess.Popen) -> None:
        """Kill the whole process group: emulator helpers must not outlive the run."""
        try:
            os.killpg(process.pid, signal.SIGTERM)
        except (ProcessLookupError, PermissionError):
            return
        try:
            process.wait(timeout=5)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(process.pid, signal.SIGKILL)
            except (ProcessLookupError, PermissionError):
                pass
            process.wait()

    def _deliver_result(self, experiment_id: str, outcome: ExecutionOutcome) -> None:
        """Exactly one result per attempt: retry through outages until answered."""
        backoff = BACKOFF_START_S
        while True:
            try:
                detail = outcome.detail
                if outcome.success:
                    self.client.report_result(experiment_id, self.worker_id, True)
                else:
                    self.client.report_result(experiment_id, self.worker_id, False, detail)
                return
            except ApiClientError as exc:
                # Definitive server answer (lease expired, already terminal):
                # the attempt's outcome is settled server-side, stop here.
                log.warning("result for %s not accepted: %s", experiment_id, exc)
                return
            except ConnectionFailed:
                log.warning(
                    "orchestrator unreachable delivering result for %s; retry in %.0fs",
                    experiment_id,
                    backoff,
                )
                time.sleep(backoff)
                backoff = min(backoff * 2, BACKOFF_CAP_S)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="maci-worker", description=__doc__)
    parser.add_argument("--endpoint", default=os.environ.get("MACI_ENDPOINT"))
    parser.add_argument("--labels", default="", help="comma-separated capability tags")
    parser.add_argument("--poll-interval", type=float, default=2.0)
    parser.add_argument("--retain-workspaces", action="store_true")
    parser.add_argument("--data-dir", default=None)
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    if not args.endpoint:
        parser.error("--endpoint (or MACI_ENDPOINT) is required")
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    agent = ExecutorAgent(
        endpoint=args.endpoint,
        labels=[l for l in args.labels.split(",") if l],
        poll_interval_s=args.poll_interval,
        data_dir=args.data_dir,
        retain_workspaces=args.retain_workspaces,
        token=os.environ.get("MACI_TOKEN"),
    )

    def _graceful(signum, frame):
        log.info("signal %d: finishing in-flight work, then exiting", signum)
        agent.stop()

    signal.signal(signal.SIGINT, _graceful)
    signal.signal(signal.SIGTERM, _graceful)
    agent.run_loop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
