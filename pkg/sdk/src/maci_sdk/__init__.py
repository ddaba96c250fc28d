"""Tiny in-experiment client for scripts executed by a MACI worker.

The worker injects MACI_PARAMS_FILE (the parameter document) and
MACI_REPORT_URL (the local ingestion endpoint); this module is a thin
convenience over those two contracts. Any language can integrate the same way
without it.

    from maci_sdk import params, record, log

    p = params()
    result = run_simulation(p["bandwidth"], p["segment_length"])
    record("stallings", result.stalls)
    log("info", "playback done")
"""

from __future__ import annotations

import json
import math
import os
import re
import time
import urllib.error
import urllib.request

__all__ = ["params", "seed", "experiment_id", "record", "log", "NotInExperimentError"]

_IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_RETRY_WINDOW_S = 5.0


class NotInExperimentError(RuntimeError):
    """Raised when the worker-injected environment is missing."""


def _params_document() -> dict:
    path = os.environ.get("MACI_PARAMS_FILE")
    if not path:
        raise NotInExperimentError(
            "MACI_PARAMS_FILE is not set; this process is not running under a worker"
        )
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def params() -> dict:
    """The experiment's parameter assignment, with native types preserved."""
    return dict(_params_document()["params"])


def seed() -> int:
    """The experiment's reproducibility seed."""
    return int(_params_document()["seed"])


def experiment_id() -> str:
    return str(_params_document()["experiment_id"])


def _post(path: str, doc: dict, retry_window_s: float | None = None) -> None:
    base = os.environ.get("MACI_REPORT_URL")
    if not base:
        raise NotInExperimentError(
            "MACI_REPORT_URL is not set; this process is not running under a worker"
        )
    request = urllib.request.Request(
        base.rstrip("/") + path,
        json.dumps(doc).encode("utf-8"),
        {"Content-Type": "application/json"},
    )
    if retry_window_s is None:
        retry_window_s = _RETRY_WINDOW_S
    deadline = time.monotonic() + retry_window_s
    pause = 0.1
    while True:
        try:
            urllib.request.urlopen(request, timeout=10.0)
            return
        except urllib.error.HTTPError as exc:
            raise ValueError(f"record rejected by the worker (HTTP {exc.code})") from exc
        except (urllib.error.URLError, ConnectionError, OSError):
            if time.monotonic() >= deadline:
                raise
            time.sleep(pause)
            pause = min(pause * 2, 1.0)


def record(metric: str, value: float) -> None:
    """Report one metric value; validated locally before anything is sent."""
    if not isinstance(metric, str) or not _IDENTIFIER_RE.match(metric):
        raise ValueError(f"invalid metric name {metric!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"metric {metric!r}: value must be a number")
    if not math.isfinite(float(value)):
        raise ValueError(f"metric {metric!r}: value must be finite")
    _post("/metric", {"metric": metric, "value": float(value)})


def log(level: str, message: str) -> None:
    """Report one log line; level is info, warn, or error."""
    if level not in ("info", "warn", "error"):
        raise ValueError(f"invalid log level {level!r}")
    if not isinstance(message, str):
        raise ValueError("log message must be text")
    _post("/log", {"level": level, "message": message})
