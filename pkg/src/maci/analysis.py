"""Query engine over completed experiments: frames, cube, Pareto, export.

Everything here is read-only over the store. Statistics are computed once,
server-side, so the CLI, exports, and UI can never disagree: quantiles use
type-7 linear interpolation (h = (n-1)p between order statistics) and
outliers use the 1.5 IQR Tukey fences.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum

from .model import (
    ExperimentStatus,
    MetricDirection,
    ParamValue,
    Study,
    StudyTemplate,
    instance_to_doc,
    log_record_to_doc,
    metric_record_to_doc,
    provenance_to_doc,
)
from .orchestrator import (
    UnknownExperimentError,
    UnknownStudyError,
    ValidationFailure,
)
from .store import Store


class Reducer(str, Enum):
    """How one experiment's record sequence collapses to a single cell."""

    LAST = "last"
    FIRST = "first"
    MEAN = "mean"
    MAX = "max"
    MIN = "min"
    SUM = "sum"


def reduce_series(values: list[float], reducer: Reducer) -> float:
    if reducer is Reducer.LAST:
        return values[-1]
    if reducer is Reducer.FIRST:
        return values[0]
    if reducer is Reducer.MEAN:
        return sum(values) / len(values)
    if reducer is Reducer.MAX:
        return max(values)
    if reducer is Reducer.MIN:
        return min(values)
    return sum(values)


@dataclass(frozen=True)
class FrameRow:
    experiment_id: str
    combo_index: int
    repetition_index: int
    status: str
    assignment: dict[str, ParamValue]
    metrics: dict[str, float | None]


@dataclass(frozen=True)
class ResultFrame:
    study_id: str
    parameter_names: tuple[str, ...]
    parameter_kinds: dict[str, str]  # configuration | environment, per column
    metric_names: tuple[str, ...]
    rows: tuple[FrameRow, ...]


@dataclass(frozen=True)
class Filter:
    parameter: str
    op: str  # equals | in | range
    value: ParamValue | None = None
    values: tuple[ParamValue, ...] = ()
    lo: float | None = None
    hi: float | None = None

    def matches(self, cell: ParamValue) -> bool:
        if self.op == "equals":
            return cell == self.value
        if self.op == "in":
            return cell in self.values
        num = cell.as_number()
        if num is None:
            return False
        if self.lo is not None and num < self.lo:
            return False
        if self.hi is not None and num > self.hi:
            return False
        return True

    @staticmethod
    def from_doc(doc: dict) -> "Filter":
        parameter = doc.get("parameter")
        if not isinstance(parameter, str):
            raise ValidationFailure("filter: missing parameter name")
        op = doc.get("op")
        if op == "equals":
            if "value" not in doc:
                raise ValidationFailure(f"filter on {parameter!r}: equals needs 'value'")
            return Filter(parameter=parameter, op="equals", value=ParamValue.of(doc["value"]))
        if op == "in":
            raw = doc.get("values")
            if not isinstance(raw, list) or not raw:
                raise ValidationFailure(f"filter on {parameter!r}: 'in' needs non-empty 'values'")
            return Filter(
                parameter=parameter, op="in", values=tuple(ParamValue.of(v) for v in raw)
            )
        if op == "range":
            lo, hi = doc.get("lo"), doc.get("hi")
            for bound, label in ((lo, "lo"), (hi, "hi")):
                if bound is not None and (
                    isinstance(bound, bool) or not isinstance(bound, (int, float))
                ):
                    raise ValidationFailure(f"filter on {parameter!r}: {label} must be numeric")
            return Filter(
                parameter=parameter,
                op="range",
                lo=float(lo) if lo is not None else None,
                hi=float(hi) if hi is not None else None,
            )
        raise ValidationFailure(f"filter on {parameter!r}: unknown op {op!r}")


@dataclass(frozen=True)
class CubeQuery:
    study_id: str
    metric: str
    reducer: Reducer = Reducer.LAST
    filters: tuple[Filter, ...] = ()
    group_by: tuple[str, ...] = ()
    include_failed: bool = False

    @staticmethod
    def from_doc(doc: dict) -> "CubeQuery":
        study_id = doc.get("study_id")
        metric = doc.get("metric")
        if not isinstance(study_id, str) or not isinstance(metric, str):
            raise ValidationFailure("cube query needs study_id and metric")
        try:
            reducer = Reducer(doc.get("reducer", "last"))
        except ValueError:
            raise ValidationFailure(f"unknown reducer {doc.get('reducer')!r}") from None
        filters = tuple(Filter.from_doc(f) for f in doc.get("filters", []))
        group_by = doc.get("group_by", [])
        if not isinstance(group_by, list) or not all(isinstance(g, str) for g in group_by):
            raise ValidationFailure("group_by must be a list of parameter names")
        return CubeQuery(
            study_id=study_id,
            metric=metric,
            reducer=reducer,
            filters=filters,
            group_by=tuple(group_by),
            include_failed=bool(doc.get("include_failed", False)),
        )


@dataclass(frozen=True)
class GroupSummary:
    group_key: dict[str, ParamValue]
    count: int
    mean: float
    std: float | None
    min: float
    q1: float
    median: float
    q3: float
    max: float
    outliers: tuple[float, ...]

    def to_doc(self) -> dict:
        return {
            "group_key": {k: v.to_doc() for k, v in self.group_key.items()},
            "count": self.count,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "q1": self.q1,
            "median": self.median,
            "q3": self.q3,
            "max": self.max,
            "outliers": list(self.outliers),
        }


@dataclass(frozen=True)
class ParetoPoint:
    key: dict[str, ParamValue] | str  # group_key, or experiment id when ungrouped
    x: float
    y: float
    on_frontier: bool

    def to_doc(self) -> dict:
        doc: dict = {"x": self.x, "y": self.y, "on_frontier": self.on_frontier}
        if isinstance(self.key, str):
            doc["experiment_id"] = self.key
        else:
            doc["group_key"] = {k: v.to_doc() for k, v in self.key.items()}
        return doc


def quantile_type7(sorted_values: list[float], p: float) -> float:
    """Linear interpolation between order statistics at h = (n-1)p."""
    n = len(sorted_values)
    if n == 1:
        return sorted_values[0]
    h = (n - 1) * p
    lo = math.floor(h)
    if lo + 1 >= n:
        return sorted_values[-1]
    frac = h - lo
    return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo])


def summarize_group(group_key: dict[str, ParamValue], values: list[float]) -> GroupSummary:
    ordered = sorted(values)
    n = len(ordered)
    mean = sum(ordered) / n
    if n > 1:
        var = sum((v - mean) ** 2 for v in ordered) / (n - 1)
        std = math.sqrt(var)
    else:
        std = None
    q1 = quantile_type7(ordered, 0.25)
    median = quantile_type7(ordered, 0.5)
    q3 = quantile_type7(ordered, 0.75)
    iqr = q3 - q1
    fence_lo = q1 - 1.5 * iqr
    fence_hi = q3 + 1.5 * iqr
    outliers = [v for v in ordered if v < fence_lo or v > fence_hi]
    inliers = [v for v in ordered if fence_lo <= v <= fence_hi]
    # Whiskers never retract past the box: with no inlier below q1 (or above
    # q3) the whisker collapses onto the box edge.
    whisker_lo = min(inliers[0], q1) if inliers else q1
    whisker_hi = max(inliers[-1], q3) if inliers else q3
    return GroupSummary(
        group_key=group_key,
        count=n,
        mean=mean,
        std=std,
        min=whisker_lo,
        q1=q1,
        median=median,
        q3=q3,
        max=whisker_hi,
        outliers=tuple(outliers),
    )


class AnalysisEngine:
    """Read-only OLAP-flavored queries over one store."""

    def __init__(self, store: Store):
        self.store = store

    # -- frame construction ---------------------------------------------------

    def _study_and_template(self, cur, study_id: str) -> tuple[Study, StudyTemplate]:
        study = self.store.get_study(cur, study_id)
        if study is None:
            raise UnknownStudyError(f"no study {study_id!r}")
        template = self.store.get_template(cur, study.template_id)
        return study, template

    def build_frame(
        self,
        study_id: str,
        reducer_map: dict[str, Reducer] | None = None,
        include_failed: bool = False,
    ) -> ResultFrame:
        reducer_map = reducer_map or {}
        with self.store.snapshot() as cur:
            study, template = self._study_and_template(cur, study_id)
            instances = self.store.list_instances(cur, study_id)
            records = self.store.metrics_for_study(cur, study_id)

        included = {ExperimentStatus.FINISHED}
        if include_failed:
            included.add(ExperimentStatus.FAILED)

        declared = [m.name for m in template.declared_metrics]
        observed = sorted({r.metric for r in records} - set(declared))
        metric_names = tuple(declared + observed)

        # records arrive ordered by (experiment, metric, seq)
        series: dict[tuple[str, str], list[float]] = {}
        for r in records:
            series.setdefault((r.experiment_id, r.metric), []).append(r.value)

        rows = []
        for inst in instances:
            if inst.status not in included:
                continue
            cells: dict[str, float | None] = {}
            for name in metric_names:
                values = series.get((inst.id, name))
                if values:
                    cells[name] = reduce_series(values, reducer_map.get(name, Reducer.LAST))
                else:
                    cells[name] = None
            rows.append(
                FrameRow(
                    experiment_id=inst.id,
                    combo_index=inst.combo_index,
                    repetition_index=inst.repetition_index,
                    status=inst.status.value,
                    assignment=inst.assignment,
                    metrics=cells,
                )
            )
        rows.sort(key=lambda r: (r.combo_index, r.repetition_index))
        return ResultFrame(
            study_id=study_id,
            parameter_names=tuple(p.name for p in template.parameters),
            parameter_kinds={p.name: p.kind.value for p in template.parameters},
            metric_names=metric_names,
            rows=tuple(rows),
        )

    # -- cube -------------------------------------------------------------------

    def cube(self, query: CubeQuery) -> list[GroupSummary]:
        frame = self.build_frame(
            query.study_id, {query.metric: query.reducer}, query.include_failed
        )
        with self.store.snapshot() as cur:
            _, template = self._study_and_template(cur, query.study_id)
        self._check_names(
            frame, [f.parameter for f in query.filters] + list(query.group_by), query.metric
        )

        rows = [
            r
            for r in frame.rows
            if r.metrics[query.metric] is not None
            and all(f.matches(r.assignment[f.parameter]) for f in query.filters)
        ]

        groups: dict[tuple[ParamValue, ...], list[float]] = {}
        for r in rows:
            key = tuple(r.assignment[g] for g in query.group_by)
            groups.setdefault(key, []).append(r.metrics[query.metric])

        def rank(key: tuple[ParamValue, ...]) -> tuple[int, ...]:
            return tuple(
                template.parameter(name).value_index(value)
                for name, value in zip(query.group_by, key)
            )

        summaries = []
        for key in sorted(groups, key=rank):
            group_key = dict(zip(query.group_by, key))
            summaries.append(summarize_group(group_key, groups[key]))
        return summaries

    def _check_names(self, frame: ResultFrame, parameters: list[str], metric: str) -> None:
        for name in parameters:
            if name not in frame.parameter_names:
                raise ValidationFailure(f"unknown parameter {name!r} in query")
        if metric not in frame.metric_names:
            raise ValidationFailure(f"unknown metric {metric!r} in query")

    # -- pareto -----------------------------------------------------------------

    def pareto(
        self,
        study_id: str,
        metric_x: str,
        dir_x: str | None,
        metric_y: str,
        dir_y: str | None,
        group_by: tuple[str, ...] = (),
        reducer_map: dict[str, Reducer] | None = None,
    ) -> list[ParetoPoint]:
        frame = self.build_frame(study_id, reducer_map)
        with self.store.snapshot() as cur:
            _, template = self._study_and_template(cur, study_id)
        for metric in (metric_x, metric_y):
            if metric not in frame.metric_names:
                raise ValidationFailure(f"unknown metric {metric!r} in query")
        for name in group_by:
            if name not in frame.parameter_names:
                raise ValidationFailure(f"unknown parameter {name!r} in query")
        maximize_x = self._resolve_direction(template, metric_x, dir_x)
        maximize_y = self._resolve_direction(template, metric_y, dir_y)

        candidates: list[tuple[dict[str, ParamValue] | str, float, float]] = []
        if group_by:
            sums: dict[tuple[ParamValue, ...], list[list[float]]] = {}
            for r in frame.rows:
                x, y = r.metrics[metric_x], r.metrics[metric_y]
                key = tuple(r.assignment[g] for g in group_by)
                bucket = sums.setdefault(key, [[], []])
                if x is not None:
                    bucket[0].append(x)
                if y is not None:
                    bucket[1].append(y)
            for key, (xs, ys) in sorted(
                sums.items(),
                key=lambda item: tuple(
                    template.parameter(n).value_index(v) for n, v in zip(group_by, item[0])
                ),
            ):
                if xs and ys:
                    candidates.append(
                        (dict(zip(group_by, key)), sum(xs) / len(xs), sum(ys) / len(ys))
                    )
        else:
            for r in frame.rows:
                x, y = r.metrics[metric_x], r.metrics[metric_y]
                if x is not None and y is not None:
                    candidates.append((r.experiment_id, x, y))

        flags = frontier_flags(
            [(x, y) for _, x, y in candidates], maximize_x, maximize_y
        )
        points = [
            ParetoPoint(key=key, x=x, y=y, on_frontier=flag)
            for (key, x, y), flag in zip(candidates, flags)
        ]
        points.sort(key=lambda p: (p.x, p.y))
        return points

    @staticmethod
    def _resolve_direction(
        template: StudyTemplate, metric: str, override: str | None
    ) -> bool:
        if override is not None:
            if override not in ("maximize", "minimize"):
                raise ValidationFailure(
                    f"direction for {metric!r} must be maximize or minimize"
                )
            return override == "maximize"
        declared = next(
            (m.direction for m in template.declared_metrics if m.name == metric), None
        )
        if declared is None or declared is MetricDirection.NEUTRAL:
            raise ValidationFailure(
                f"metric {metric!r} has no usable default direction; pass one explicitly"
            )
        return declared is MetricDirection.MAXIMIZE

    # -- drill-down ----------------------------------------------------------------

    def drill_down(self, experiment_id: str) -> dict:
        with self.store.snapshot() as cur:
            instance = self.store.get_instance(cur, experiment_id)
            if instance is None:
                raise UnknownExperimentError(f"no experiment {experiment_id!r}")
            study = self.store.get_study(cur, instance.study_id)
            metrics = self.store.metrics_for_experiment(cur, experiment_id)
            logs = self.store.logs_for_experiment(cur, experiment_id)
        return {
            "experiment": instance_to_doc(instance),
            "metrics": [metric_record_to_doc(m) for m in metrics],
            "logs": [log_record_to_doc(l) for l in logs],
            "provenance": provenance_to_doc(study.provenance),
            "attempts": instance.attempt,
        }

    # -- export -------------------------------------------------------------------

    def export_frame(
        self,
        study_id: str,
        fmt: str,
        reducer_map: dict[str, Reducer] | None = None,
        include_failed: bool = False,
    ) -> bytes:
        frame = self.build_frame(study_id, reducer_map, include_failed)
        if fmt == "csv":
            return frame_to_csv(frame)
        if fmt == "jsonl":
            return frame_to_jsonl(frame)
        raise ValidationFailure(f"unknown export format {fmt!r}")


def frame_header(frame: ResultFrame) -> list[str]:
    return list(frame.parameter_names) + ["repetition_index", "status"] + list(
        frame.metric_names
    )


def frame_to_csv(frame: ResultFrame) -> bytes:
    out = io.StringIO()
    writer = csv.writer(out, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(frame_header(frame))
    for row in frame.rows:
        cells = [row.assignment[p].canonical_text for p in frame.parameter_names]
        cells.append(str(row.repetition_index))
        cells.append(row.status)
        for name in frame.metric_names:
            value = row.metrics[name]
            cells.append("" if value is None else repr(value))
        writer.writerow(cells)
    return out.getvalue().encode("utf-8")


def frame_to_jsonl(frame: ResultFrame) -> bytes:
    lines = []
    for row in frame.rows:
        doc: dict = {p: row.assignment[p].to_doc() for p in frame.parameter_names}
        doc["repetition_index"] = row.repetition_index
        doc["status"] = row.status
        for name in frame.metric_names:
            doc[name] = row.metrics[name]
        lines.append(json.dumps(doc, ensure_ascii=False))
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def frontier_flags(
    points: list[tuple[float, float]], maximize_x: bool, maximize_y: bool
) -> list[bool]:
    """Non-domination flags via a sort-and-sweep skyline scan.

    A point dominates another when it is at least as good on both axes and
    strictly better on one; identical points share frontier membership.
    """
    goods = [
        (x if maximize_x else -x, y if maximize_y else -y) for x, y in points
    ]
    order = sorted(range(len(goods)), key=lambda i: (-goods[i][0], -goods[i][1]))
    flags = [False] * len(goods)
    best_y_above = -math.inf  # max good-y among points with strictly better good-x
    i = 0
    while i < len(order):
        j = i
        tier_x = goods[order[i]][0]
        while j < len(order) and goods[order[j]][0] == tier_x:
            j += 1
        tier = order[i:j]
        tier_best_y = max(goods[k][1] for k in tier)
        for k in tier:
            gy = goods[k][1]
            flags[k] = gy >= tier_best_y and gy > best_y_above
        best_y_above = max(best_y_above, tier_best_y)
        i = j
    return flags
