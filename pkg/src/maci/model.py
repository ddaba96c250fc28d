"""Core domain model: templates, studies, experiments, and deterministic expansion.

Pure value types and pure functions; no I/O. Everything here is safe to share
across threads. The document form produced by ``*_to_doc`` / parsed by
``*_from_doc`` is the canonical wire and persistence format.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum


IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_U64 = (1 << 64) - 1

# Seed mixing constants. These are frozen: changing any of them silently
# changes every derived experiment seed, breaking reproducibility of stored
# studies. Do not touch.
SEED_COMBO_GAMMA = 0x9E3779B97F4A7C15
SEED_REPETITION_GAMMA = 0xBF58476D1CE4E5B9
_MIX_MUL_1 = 0xBF58476D1CE4E5B9
_MIX_MUL_2 = 0x94D049BB133111EB


class ModelError(ValueError):
    """Raised when a document or argument violates a model invariant."""

    def __init__(self, errors: list[str] | str):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = errors
        super().__init__("; ".join(errors))


def splitmix64_mix(value: int) -> int:
    """SplitMix64 output finalizer (xor-shift / multiply avalanche) on a u64."""
    z = value & _U64
    z = ((z ^ (z >> 30)) * _MIX_MUL_1) & _U64
    z = ((z ^ (z >> 27)) * _MIX_MUL_2) & _U64
    return (z ^ (z >> 31)) & _U64


def derive_seed(base_seed: int, combo_index: int, repetition_index: int) -> int:
    """Derive the per-experiment seed for one (combo, repetition) cell.

    Pure, platform-independent u64 arithmetic: the base seed is XORed with
    each index scaled by a fixed odd gamma, then avalanched through the
    SplitMix64 finalizer.
    """
    mixed = (
        (base_seed & _U64)
        ^ ((combo_index * SEED_COMBO_GAMMA) & _U64)
        ^ ((repetition_index * SEED_REPETITION_GAMMA) & _U64)
    )
    return splitmix64_mix(mixed)


class ParamKind(str, Enum):
    CONFIGURATION = "configuration"
    ENVIRONMENT = "environment"


class ValueKind(str, Enum):
    TEXT = "text"
    NUMBER = "number"
    BOOLEAN = "boolean"


class MetricDirection(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"
    NEUTRAL = "neutral"


class StudyStatus(str, Enum):
    DRAFT = "draft"
    RUNNING = "running"
    FINISHED = "finished"
    CANCELED = "canceled"


class ExperimentStatus(str, Enum):
    PENDING = "pending"
    LEASED = "leased"
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"
    CANCELED = "canceled"


TERMINAL_STATUSES = frozenset(
    {ExperimentStatus.FINISHED, ExperimentStatus.FAILED, ExperimentStatus.CANCELED}
)

# Legal experiment status transitions. leased -> failed covers lease expiry
# with attempts exhausted; every other edge is rejected.
ALLOWED_TRANSITIONS = frozenset(
    {
        (ExperimentStatus.PENDING, ExperimentStatus.LEASED),
        (ExperimentStatus.LEASED, ExperimentStatus.RUNNING),
        (ExperimentStatus.RUNNING, ExperimentStatus.FINISHED),
        (ExperimentStatus.RUNNING, ExperimentStatus.FAILED),
        (ExperimentStatus.LEASED, ExperimentStatus.FAILED),
        (ExperimentStatus.LEASED, ExperimentStatus.PENDING),
        (ExperimentStatus.RUNNING, ExperimentStatus.PENDING),
        (ExperimentStatus.PENDING, ExperimentStatus.CANCELED),
        (ExperimentStatus.LEASED, ExperimentStatus.CANCELED),
        (ExperimentStatus.RUNNING, ExperimentStatus.CANCELED),
    }
)


class LogLevel(str, Enum):
    INFO = "info"
    WARN = "warn"
    ERROR = "error"


def can_transition(old: ExperimentStatus, new: ExperimentStatus) -> bool:
    return (old, new) in ALLOWED_TRANSITIONS


@dataclass(frozen=True)
class ParamValue:
    """Tagged scalar parameter value: text, finite number, or boolean.

    Equality is exact by tag and payload; numbers are canonicalized (-0.0
    becomes +0.0, NaN and infinities are rejected) so equal values serialize
    identically everywhere.
    """

    kind: ValueKind
    value: str | float | bool

    @staticmethod
    def of(raw: object) -> "ParamValue":
        if isinstance(raw, ParamValue):
            return raw
        if isinstance(raw, bool):
            return ParamValue(ValueKind.BOOLEAN, raw)
        if isinstance(raw, (int, float)):
            num = float(raw)
            if not math.isfinite(num):
                raise ModelError(f"parameter value must be finite, got {raw!r}")
            if num == 0.0:
                num = 0.0  # collapse -0.0
            return ParamValue(ValueKind.NUMBER, num)
        if isinstance(raw, str):
            return ParamValue(ValueKind.TEXT, raw)
        raise ModelError(f"unsupported parameter value type {type(raw).__name__}")

    def to_doc(self) -> str | float | int | bool:
        if self.kind is ValueKind.NUMBER:
            num = float(self.value)
            if num.is_integer() and abs(num) <= 2**53:
                return int(num)
            return num
        return self.value

    @property
    def canonical_text(self) -> str:
        """Stable text rendering used in CSV cells and MACI_PARAM_* env vars."""
        if self.kind is ValueKind.TEXT:
            return str(self.value)
        if self.kind is ValueKind.BOOLEAN:
            return "true" if self.value else "false"
        num = float(self.value)
        if num.is_integer() and abs(num) <= 2**53:
            return str(int(num))
        return repr(num)

    def as_number(self) -> float | None:
        return float(self.value) if self.kind is ValueKind.NUMBER else None


@dataclass(frozen=True)
class ParameterDefinition:
    """A named, ordered value set swept by studies of one template."""

    name: str
    kind: ParamKind
    values: tuple[ParamValue, ...]
    unit: str | None = None

    def value_index(self, value: ParamValue) -> int:
        return self.values.index(value)


@dataclass(frozen=True)
class MetricDeclaration:
    name: str
    direction: MetricDirection = MetricDirection.NEUTRAL
    unit: str | None = None


@dataclass(frozen=True)
class StudyTemplate:
    id: str
    name: str
    script: str
    parameters: tuple[ParameterDefinition, ...]
    declared_metrics: tuple[MetricDeclaration, ...]
    created_at: float  # epoch seconds, UTC

    def parameter(self, name: str) -> ParameterDefinition | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None


@dataclass(frozen=True)
class ProvenanceInfo:
    commit_id: str | None = None
    implementation_version: str | None = None
    extra: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Study:
    id: str
    template_id: str
    bound_values: dict[str, tuple[ParamValue, ...]]
    repetitions: int
    base_seed: int
    provenance: ProvenanceInfo
    status: StudyStatus
    created_at: float


@dataclass(frozen=True)
class ExperimentInstance:
    id: str
    study_id: str
    combo_index: int
    repetition_index: int
    assignment: dict[str, ParamValue]
    seed: int
    status: ExperimentStatus = ExperimentStatus.PENDING
    attempt: int = 0
    exit_detail: str | None = None


@dataclass(frozen=True)
class MetricRecord:
    experiment_id: str
    metric: str
    seq: int
    value: float
    wall_offset_ms: int


@dataclass(frozen=True)
class LogRecord:
    experiment_id: str
    level: LogLevel
    message: str
    wall_offset_ms: int


def validate_template(template: StudyTemplate) -> list[str]:
    """Structural validation; returns one message per violation (empty = valid)."""
    errors: list[str] = []
    seen_params: set[str] = set()
    for pos, p in enumerate(template.parameters):
        label = f"parameters[{pos}] ({p.name!r})"
        if not IDENTIFIER_RE.match(p.name):
            errors.append(f"{label}: name is not a valid identifier")
        if p.name in seen_params:
            errors.append(f"{label}: duplicate parameter name")
        seen_params.add(p.name)
        if not p.values:
            errors.append(f"{label}: values list is empty")
        if len(set(p.values)) != len(p.values):
            errors.append(f"{label}: values list contains duplicates")
    seen_metrics: set[str] = set()
    for pos, m in enumerate(template.declared_metrics):
        label = f"declared_metrics[{pos}] ({m.name!r})"
        if not IDENTIFIER_RE.match(m.name):
            errors.append(f"{label}: name is not a valid identifier")
        if m.name in seen_metrics:
            errors.append(f"{label}: duplicate metric name")
        seen_metrics.add(m.name)
    return errors


def validate_study(template: StudyTemplate, study: Study) -> list[str]:
    """Check study bindings against the template; returns error messages."""
    errors: list[str] = []
    template_names = [p.name for p in template.parameters]
    missing = [n for n in template_names if n not in study.bound_values]
    extra = [n for n in study.bound_values if n not in template_names]
    for name in missing:
        errors.append(f"bound_values: missing parameter {name!r}")
    for name in extra:
        errors.append(f"bound_values: unknown parameter {name!r}")
    for p in template.parameters:
        chosen = study.bound_values.get(p.name)
        if chosen is None:
            continue
        if not chosen:
            errors.append(f"bound_values[{p.name!r}]: empty value subset")
        if len(set(chosen)) != len(chosen):
            errors.append(f"bound_values[{p.name!r}]: duplicate values")
        for v in chosen:
            if v not in p.values:
                errors.append(
                    f"bound_values[{p.name!r}]: value {v.canonical_text!r} "
                    "is not in the template's value list"
                )
    if study.repetitions < 1:
        errors.append("repetitions: must be >= 1")
    if not (0 <= study.base_seed <= _U64):
        errors.append("base_seed: must be an unsigned 64-bit integer")
    return errors


def _ordered_subset(definition: ParameterDefinition, chosen: tuple[ParamValue, ...]) -> list[ParamValue]:
    # Enumeration always follows the template's declared value order,
    # regardless of the order bindings were written in.
    return sorted(chosen, key=definition.value_index)


def instance_count(template: StudyTemplate, study: Study) -> int:
    count = study.repetitions
    for p in template.parameters:
        count *= len(study.bound_values[p.name])
    return count


def expand_study(template: StudyTemplate, study: Study) -> list[ExperimentInstance]:
    """Materialize every (parameter combination, repetition) cell of a study.

    Enumeration order is lexicographic over value indices with the first
    declared parameter varying slowest and the repetition index varying
    fastest; combo_index is the lexicographic rank. Identical inputs always
    produce identical output lists, including instance ids.
    """
    errors = validate_study(template, study)
    if errors:
        raise ModelError(errors)

    ordered: list[tuple[str, list[ParamValue]]] = [
        (p.name, _ordered_subset(p, study.bound_values[p.name])) for p in template.parameters
    ]
    cardinalities = [len(vals) for _, vals in ordered]
    total_combos = 1
    for c in cardinalities:
        total_combos *= c

    instances: list[ExperimentInstance] = []
    for combo_index in range(total_combos):
        assignment: dict[str, ParamValue] = {}
        remainder = combo_index
        # Decode the rank: first parameter has the largest stride.
        for pos in range(len(ordered) - 1, -1, -1):
            name, vals = ordered[pos]
            remainder, value_idx = divmod(remainder, cardinalities[pos])
            assignment[name] = vals[value_idx]
        assignment = {name: assignment[name] for name, _ in ordered}
        for repetition_index in range(study.repetitions):
            instances.append(
                ExperimentInstance(
                    id=f"{study.id}.{combo_index}.{repetition_index}",
                    study_id=study.id,
                    combo_index=combo_index,
                    repetition_index=repetition_index,
                    assignment=assignment,
                    seed=derive_seed(study.base_seed, combo_index, repetition_index),
                )
            )
    return instances


def estimate_duration(
    study: Study,
    template: StudyTemplate,
    per_experiment_s: float,
    parallel_workers: int,
) -> float:
    """Projected wall-clock seconds for a full study on a fixed-size fleet."""
    if per_experiment_s <= 0:
        raise ModelError("per_experiment_s must be > 0")
    if parallel_workers < 1:
        raise ModelError("parallel_workers must be >= 1")
    count = instance_count(template, study)
    return math.ceil(count / parallel_workers) * per_experiment_s


# --- canonical document (de)serialization -------------------------------


def timestamp_to_doc(epoch_s: float) -> str:
    dt = datetime.fromtimestamp(epoch_s, tz=timezone.utc)
    return dt.isoformat(timespec="microseconds").replace("+00:00", "Z")


def timestamp_from_doc(raw: object) -> float:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    if isinstance(raw, str):
        text = raw[:-1] + "+00:00" if raw.endswith("Z") else raw
        try:
            return datetime.fromisoformat(text).timestamp()
        except ValueError:
            raise ModelError(f"invalid timestamp {raw!r}") from None
    raise ModelError(f"invalid timestamp {raw!r}")


def _req(doc: dict, key: str, kind: str) -> object:
    if key not in doc:
        raise ModelError(f"{kind}: missing field {key!r}")
    return doc[key]


def _identifier(raw: object, label: str) -> str:
    if not isinstance(raw, str) or not IDENTIFIER_RE.match(raw):
        raise ModelError(f"{label}: not a valid identifier: {raw!r}")
    return raw


def _enum(enum_cls: type, raw: object, label: str):
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ModelError(f"{label}: expected one of {allowed}, got {raw!r}") from None


def parameter_to_doc(p: ParameterDefinition) -> dict:
    return {
        "name": p.name,
        "kind": p.kind.value,
        "values": [v.to_doc() for v in p.values],
        "unit": p.unit,
    }


def parameter_from_doc(doc: dict) -> ParameterDefinition:
    name = _identifier(_req(doc, "name", "parameter"), "parameter.name")
    kind = _enum(ParamKind, _req(doc, "kind", "parameter"), f"parameter {name!r} kind")
    raw_values = _req(doc, "values", "parameter")
    if not isinstance(raw_values, list) or not raw_values:
        raise ModelError(f"parameter {name!r}: values must be a non-empty list")
    values = tuple(ParamValue.of(v) for v in raw_values)
    unit = doc.get("unit")
    if unit is not None and not isinstance(unit, str):
        raise ModelError(f"parameter {name!r}: unit must be text")
    return ParameterDefinition(name=name, kind=kind, values=values, unit=unit)


def metric_to_doc(m: MetricDeclaration) -> dict:
    return {"name": m.name, "direction": m.direction.value, "unit": m.unit}


def metric_from_doc(doc: dict) -> MetricDeclaration:
    name = _identifier(_req(doc, "name", "metric"), "metric.name")
    direction = _enum(
        MetricDirection, doc.get("direction", "neutral"), f"metric {name!r} direction"
    )
    unit = doc.get("unit")
    if unit is not None and not isinstance(unit, str):
        raise ModelError(f"metric {name!r}: unit must be text")
    return MetricDeclaration(name=name, direction=direction, unit=unit)


def template_to_doc(t: StudyTemplate) -> dict:
    return {
        "id": t.id,
        "name": t.name,
        "script": t.script,
        "parameters": [parameter_to_doc(p) for p in t.parameters],
        "declared_metrics": [metric_to_doc(m) for m in t.declared_metrics],
        "created_at": timestamp_to_doc(t.created_at),
    }


def template_from_doc(doc: dict) -> StudyTemplate:
    template = StudyTemplate(
        id=str(_req(doc, "id", "template")),
        name=str(_req(doc, "name", "template")),
        script=str(_req(doc, "script", "template")),
        parameters=tuple(parameter_from_doc(p) for p in doc.get("parameters", [])),
        declared_metrics=tuple(metric_from_doc(m) for m in doc.get("declared_metrics", [])),
        created_at=timestamp_from_doc(doc.get("created_at", 0.0)),
    )
    errors = validate_template(template)
    if errors:
        raise ModelError(errors)
    return template


def provenance_to_doc(p: ProvenanceInfo) -> dict:
    return {
        "commit_id": p.commit_id,
        "implementation_version": p.implementation_version,
        "extra": dict(p.extra),
    }


def provenance_from_doc(doc: dict | None) -> ProvenanceInfo:
    if doc is None:
        return ProvenanceInfo()
    extra = doc.get("extra") or {}
    if not isinstance(extra, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in extra.items()
    ):
        raise ModelError("provenance.extra must map text to text")
    commit_id = doc.get("commit_id")
    version = doc.get("implementation_version")
    if commit_id is not None and not isinstance(commit_id, str):
        raise ModelError("provenance.commit_id must be text")
    if version is not None and not isinstance(version, str):
        raise ModelError("provenance.implementation_version must be text")
    return ProvenanceInfo(commit_id=commit_id, implementation_version=version, extra=dict(extra))


def study_to_doc(s: Study) -> dict:
    return {
        "id": s.id,
        "template_id": s.template_id,
        "bound_values": {k: [v.to_doc() for v in vals] for k, vals in s.bound_values.items()},
        "repetitions": s.repetitions,
        "base_seed": s.base_seed,
        "provenance": provenance_to_doc(s.provenance),
        "status": s.status.value,
        "created_at": timestamp_to_doc(s.created_at),
    }


def study_from_doc(doc: dict) -> Study:
    raw_bound = _req(doc, "bound_values", "study")
    if not isinstance(raw_bound, dict):
        raise ModelError("study.bound_values must be an object")
    bound = {
        str(name): tuple(ParamValue.of(v) for v in vals) for name, vals in raw_bound.items()
    }
    repetitions = _req(doc, "repetitions", "study")
    if not isinstance(repetitions, int) or isinstance(repetitions, bool):
        raise ModelError("study.repetitions must be an integer")
    base_seed = _req(doc, "base_seed", "study")
    if not isinstance(base_seed, int) or isinstance(base_seed, bool):
        raise ModelError("study.base_seed must be an integer")
    return Study(
        id=str(_req(doc, "id", "study")),
        template_id=str(_req(doc, "template_id", "study")),
        bound_values=bound,
        repetitions=repetitions,
        base_seed=base_seed,
        provenance=provenance_from_doc(doc.get("provenance")),
        status=_enum(StudyStatus, doc.get("status", "draft"), "study.status"),
        created_at=timestamp_from_doc(doc.get("created_at", 0.0)),
    )


def assignment_to_doc(assignment: dict[str, ParamValue]) -> dict:
    return {name: value.to_doc() for name, value in assignment.items()}


def assignment_from_doc(doc: dict) -> dict[str, ParamValue]:
    return {str(name): ParamValue.of(v) for name, v in doc.items()}


def instance_to_doc(e: ExperimentInstance) -> dict:
    return {
        "id": e.id,
        "study_id": e.study_id,
        "combo_index": e.combo_index,
        "repetition_index": e.repetition_index,
        "assignment": assignment_to_doc(e.assignment),
        "seed": e.seed,
        "status": e.status.value,
        "attempt": e.attempt,
        "exit_detail": e.exit_detail,
    }


def instance_from_doc(doc: dict) -> ExperimentInstance:
    return ExperimentInstance(
        id=str(_req(doc, "id", "experiment")),
        study_id=str(_req(doc, "study_id", "experiment")),
        combo_index=int(_req(doc, "combo_index", "experiment")),
        repetition_index=int(_req(doc, "repetition_index", "experiment")),
        assignment=assignment_from_doc(_req(doc, "assignment", "experiment")),
        seed=int(_req(doc, "seed", "experiment")),
        status=_enum(ExperimentStatus, doc.get("status", "pending"), "experiment.status"),
        attempt=int(doc.get("attempt", 0)),
        exit_detail=doc.get("exit_detail"),
    )


def metric_record_to_doc(r: MetricRecord) -> dict:
    return {
        "experiment_id": r.experiment_id,
        "metric": r.metric,
        "seq": r.seq,
        "value": r.value,
        "wall_offset_ms": r.wall_offset_ms,
    }


def log_record_to_doc(r: LogRecord) -> dict:
    return {
        "experiment_id": r.experiment_id,
        "level": r.level.value,
        "message": r.message,
        "wall_offset_ms": r.wall_offset_ms,
    }
