"""Operator command line: drive the full study lifecycle against a running service.

Talks only to the documented HTTP API (never to the store), so it works the
same from a laptop, a CI job, or the service host. Endpoint comes from
--endpoint or MACI_ENDPOINT; an optional bearer token from MACI_TOKEN.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

from .client import ApiClient, ApiClientError, ConnectionFailed

EXIT_OK = 0
EXIT_API_ERROR = 1
EXIT_CANCELED = 2
EXIT_FAILURES = 3
EXIT_USAGE = 64


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def load_study_file(path: str) -> tuple[dict, dict]:
    """Parse a study file into (template_doc, study_doc); script may be inline
    or referenced by path relative to the file."""
    file_path = Path(path)
    doc = json.loads(file_path.read_text("utf-8"))
    template = dict(doc.get("template") or {})
    study = dict(doc.get("study") or {})
    if "script_path" in template:
        script_file = (file_path.parent / template.pop("script_path")).resolve()
        template["script"] = script_file.read_text("utf-8")
    if "script" not in template:
        raise ValueError("study file template needs 'script' or 'script_path'")
    return template, study


def _probe_commit_id() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            timeout=2.0,
            text=True,
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    return out.stdout.strip() if out.returncode == 0 else None


def cmd_template_push(client: ApiClient, args) -> int:
    doc = json.loads(Path(args.file).read_text("utf-8"))
    template = client.push_template(doc)
    print(template["id"] if not args.json else json.dumps(template))
    return EXIT_OK


def cmd_study_create(client: ApiClient, args) -> int:
    template_doc, study_doc = load_study_file(args.file)
    template = client.push_template(template_doc)

    bound = study_doc.get("bound_values")
    if not bound:
        bound = {p["name"]: p["values"] for p in template["parameters"]}
    provenance = study_doc.get("provenance") or {}
    if not provenance.get("commit_id"):
        commit = _probe_commit_id()
        if commit:
            provenance["commit_id"] = commit
    study = client.create_study(
        {
            "template_id": template["id"],
            "bound_values": bound,
            "repetitions": study_doc.get("repetitions", 1),
            "base_seed": study_doc.get("base_seed", 0),
            "provenance": provenance,
        }
    )

    count = study.get("repetitions", 1)
    for values in study["bound_values"].values():
        count *= len(values)
    if args.json:
        out = {"study": study, "experiments": count}
        if args.per_experiment_s:
            out["estimated_duration_s"] = (
                math.ceil(count / args.workers) * args.per_experiment_s
            )
        print(json.dumps(out))
        return EXIT_OK
    print(study["id"])
    print(f"{count} experiments")
    if args.per_experiment_s:
        seconds = math.ceil(count / args.workers) * args.per_experiment_s
        print(
            f"estimated duration: {seconds:.0f} s "
            f"({seconds / 3600.0:.1f} h on {args.workers} worker(s))"
        )
    return EXIT_OK


def cmd_study_start(client: ApiClient, args) -> int:
    progress = client.start_study(args.id)
    _print_progress(progress, args.json)
    return EXIT_OK


def cmd_study_cancel(client: ApiClient, args) -> int:
    progress = client.cancel_study(args.id)
    _print_progress(progress, args.json)
    return EXIT_OK


def _print_progress(progress: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(progress))
        return
    counts = progress["counts"]
    parts = [f"{k}={counts[k]}" for k in
             ("pending", "leased", "running", "finished", "failed", "canceled")]
    line = f"[{progress['status']}] " + " ".join(parts)
    if progress.get("eta_s") is not None:
        line += f" eta={progress['eta_s']:.0f}s"
    print(line)


def cmd_study_watch(client: ApiClient, args) -> int:
    while True:
        progress = client.progress(args.id)
        _print_progress(progress, args.json)
        if progress["status"] == "canceled":
            return EXIT_CANCELED
        if progress["status"] == "finished":
            return EXIT_FAILURES if progress["counts"]["failed"] else EXIT_OK
        time.sleep(args.interval)


def cmd_export(client: ApiClient, args) -> int:
    payload = client.export(args.id, args.format)
    if args.out:
        Path(args.out).write_bytes(payload)
        print(f"wrote {len(payload)} bytes to {args.out}")
    else:
        sys.stdout.write(payload.decode("utf-8"))
    return EXIT_OK


def _parse_filters(specs: list[str]) -> list[dict]:
    filters = []
    for spec in specs:
        if "=" not in spec:
            raise ValueError(f"filter {spec!r} must look like parameter=value")
        name, raw = spec.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        filters.append({"parameter": name, "op": "equals", "value": value})
    return filters


def cmd_cube(client: ApiClient, args) -> int:
    query = {
        "study_id": args.id,
        "metric": args.metric,
        "reducer": args.reducer,
        "group_by": [g for g in (args.group_by or "").split(",") if g],
        "filters": _parse_filters(args.filter or []),
        "include_failed": args.include_failed,
    }
    result = client.cube(query)
    if args.json:
        print(json.dumps(result))
        return EXIT_OK
    group_names = query["group_by"]
    headers = group_names + ["count", "mean", "std", "min", "q1", "median", "q3", "max", "outliers"]
    rows = []
    for group in result["groups"]:
        key = [_fmt(group["group_key"].get(g)) for g in group_names]
        rows.append(
            key
            + [
                _fmt(group[c])
                for c in ("count", "mean", "std", "min", "q1", "median", "q3", "max")
            ]
            + [str(len(group["outliers"]))]
        )
    print(_table(headers, rows))
    return EXIT_OK


def _parse_axis(spec: str) -> tuple[str, str | None]:
    if ":" in spec:
        metric, direction = spec.rsplit(":", 1)
        if direction not in ("max", "min"):
            raise ValueError(f"axis {spec!r}: direction must be max or min")
        return metric, "maximize" if direction == "max" else "minimize"
    return spec, None


def cmd_pareto(client: ApiClient, args) -> int:
    metric_x, dir_x = _parse_axis(args.x)
    metric_y, dir_y = _parse_axis(args.y)
    query = {
        "study_id": args.id,
        "metric_x": metric_x,
        "dir_x": dir_x,
        "metric_y": metric_y,
        "dir_y": dir_y,
        "group_by": [g for g in (args.group_by or "").split(",") if g],
    }
    result = client.pareto(query)
    if args.json:
        print(json.dumps(result))
        return EXIT_OK
    headers = ["key", metric_x, metric_y, "frontier"]
    rows = []
    for point in result["points"]:
        if "experiment_id" in point:
            key = point["experiment_id"]
        else:
            key = ",".join(f"{k}={_fmt(v)}" for k, v in point["group_key"].items())
        rows.append([key, _fmt(point["x"]), _fmt(point["y"]), "*" if point["on_frontier"] else ""])
    print(_table(headers, rows))
    return EXIT_OK


def cmd_worker_list(client: ApiClient, args) -> int:
    workers = client.list_workers()
    if args.json:
        print(json.dumps({"workers": workers}))
        return EXIT_OK
    rows = [
        [w["id"], w["state"], ",".join(w["labels"]), _fmt(w["current_experiment"])]
        for w in workers
    ]
    print(_table(["id", "state", "labels", "experiment"], rows))
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="maci", description=__doc__)
    parser.add_argument("--endpoint", default=os.environ.get("MACI_ENDPOINT"))
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    template = sub.add_parser("template").add_subparsers(dest="action", required=True)
    push = template.add_parser("push")
    push.add_argument("file")
    push.set_defaults(func=cmd_template_push)

    study = sub.add_parser("study").add_subparsers(dest="action", required=True)
    create = study.add_parser("create")
    create.add_argument("file")
    create.add_argument("--per-experiment-s", type=float, default=None)
    create.add_argument("--workers", type=int, default=1)
    create.set_defaults(func=cmd_study_create)
    start = study.add_parser("start")
    start.add_argument("id")
    start.set_defaults(func=cmd_study_start)
    watch = study.add_parser("watch")
    watch.add_argument("id")
    watch.add_argument("--interval", type=float, default=2.0)
    watch.set_defaults(func=cmd_study_watch)
    cancel = study.add_parser("cancel")
    cancel.add_argument("id")
    cancel.set_defaults(func=cmd_study_cancel)

    export = sub.add_parser("export")
    export.add_argument("id")
    export.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    export.add_argument("--out", default=None)
    export.set_defaults(func=cmd_export)

    cube = sub.add_parser("cube")
    cube.add_argument("id")
    cube.add_argument("--metric", required=True)
    cube.add_argument("--reducer", default="last",
                      choices=("last", "first", "mean", "max", "min", "sum"))
    cube.add_argument("--group-by", default="")
    cube.add_argument("--filter", action="append")
    cube.add_argument("--include-failed", action="store_true")
    cube.set_defaults(func=cmd_cube)

    pareto = sub.add_parser("pareto")
    pareto.add_argument("id")
    pareto.add_argument("--x", required=True, help="metric[:max|:min]")
    pareto.add_argument("--y", required=True, help="metric[:max|:min]")
    pareto.add_argument("--group-by", default="")
    pareto.set_defaults(func=cmd_pareto)

    worker = sub.add_parser("worker").add_subparsers(dest="action", required=True)
    worker_list = worker.add_parser("list")
    worker_list.set_defaults(func=cmd_worker_list)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if not args.endpoint:
        print("error: --endpoint or MACI_ENDPOINT is required", file=sys.stderr)
        return EXIT_USAGE
    client = ApiClient(args.endpoint, token=os.environ.get("MACI_TOKEN"))
    try:
        return args.func(client, args)
    except ApiClientError as exc:
        print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
        return EXIT_API_ERROR
    except ConnectionFailed as exc:
        print(f"error: cannot reach {args.endpoint}: {exc}", file=sys.stderr)
        return EXIT_API_ERROR
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
