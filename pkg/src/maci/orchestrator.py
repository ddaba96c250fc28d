"""Study/experiment lifecycle service: dispatch, leasing, retries, ingestion.

All operations are safe for concurrent invocation; every state transition runs
inside one store transaction, so two workers can never hold the same
experiment and a worker can never hold two experiments.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import secrets
import time
from dataclasses import dataclass
from typing import Callable

from .model import (
    ExperimentInstance,
    ExperimentStatus,
    LogLevel,
    LogRecord,
    MetricDeclaration,
    MetricRecord,
    ParamValue,
    ParameterDefinition,
    ProvenanceInfo,
    Study,
    StudyStatus,
    StudyTemplate,
    TERMINAL_STATUSES,
    assignment_to_doc,
    can_transition,
    expand_study,
    IDENTIFIER_RE,
    instance_to_doc,
    validate_study,
    validate_template,
)
from .store import Store

log = logging.getLogger("maci.orchestrator")


class OrchestratorError(Exception):
    """Base for all protocol errors; ``code`` is the machine-readable name."""

    code = "error"
    http_status = 400

    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


class UnknownTemplateError(OrchestratorError):
    code = "unknown_template"
    http_status = 404


class UnknownStudyError(OrchestratorError):
    code = "unknown_study"
    http_status = 404


class UnknownExperimentError(OrchestratorError):
    code = "unknown_experiment"
    http_status = 404


class UnknownWorkerError(OrchestratorError):
    code = "unknown_worker"
    http_status = 404


class ValidationFailure(OrchestratorError):
    code = "validation"
    http_status = 422

    def __init__(self, errors: list[str] | str):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = errors
        super().__init__("; ".join(errors))


class WrongStateError(OrchestratorError):
    code = "wrong_state"
    http_status = 409


class WorkerBusyError(OrchestratorError):
    code = "worker_busy"
    http_status = 409


class LeaseMismatchError(OrchestratorError):
    code = "lease_mismatch"
    http_status = 409


class LeaseExpiredError(OrchestratorError):
    code = "lease_expired"
    http_status = 410


class AlreadyTerminalError(OrchestratorError):
    code = "already_terminal"
    http_status = 409


class TerminalStateError(OrchestratorError):
    code = "terminal_state"
    http_status = 409


@dataclass(frozen=True)
class RetryPolicy:
    """Dispatch tuning knobs; one instance per deployment."""

    max_attempts: int = 2
    lease_duration_s: int = 600
    heartbeat_interval_s: int = 10
    offline_threshold_s: int = 30

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.lease_duration_s <= 0:
            raise ValueError("lease_duration_s must be > 0")
        if self.offline_threshold_s < 2 * self.heartbeat_interval_s:
            raise ValueError("offline_threshold_s must be >= 2x heartbeat_interval_s")


@dataclass(frozen=True)
class Lease:
    experiment_id: str
    worker_id: str
    granted_at: float
    expires_at: float
    attempt: int

    def to_doc(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "worker_id": self.worker_id,
            "granted_at": self.granted_at,
            "expires_at": self.expires_at,
            "attempt": self.attempt,
        }


@dataclass(frozen=True)
class WorkerInfo:
    id: str
    labels: list[str]
    last_heartbeat: float
    state: str  # idle | busy | offline
    current_experiment: str | None

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "labels": list(self.labels),
            "last_heartbeat": self.last_heartbeat,
            "state": self.state,
            "current_experiment": self.current_experiment,
        }


@dataclass
class StudyProgress:
    study_id: str
    status: str
    counts: dict[str, int]
    throughput_per_min: float = 0.0
    eta_s: float | None = None

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_doc(self) -> dict:
        return {
            "study_id": self.study_id,
            "status": self.status,
            "counts": dict(self.counts),
            "total": self.total,
            "throughput_per_min": self.throughput_per_min,
            "eta_s": self.eta_s,
        }


class Provisioner:
    """Extension point for managed worker fleets; v1 ships manual registration only."""

    def provision(self, count: int, labels: list[str]) -> list[str]:
        raise NotImplementedError

    def release(self, worker_ids: list[str]) -> None:
        raise NotImplementedError


class ManualProvisioner(Provisioner):
    """No-op: workers are started and registered by hand."""

    def provision(self, count: int, labels: list[str]) -> list[str]:
        return []

    def release(self, worker_ids: list[str]) -> None:
        return None


def new_id() -> str:
    return secrets.token_urlsafe(16)


class Orchestrator:
    def __init__(
        self,
        store: Store,
        policy: RetryPolicy | None = None,
        clock: Callable[[], float] = time.time,
        provisioner: Provisioner | None = None,
    ):
        self.store = store
        self.policy = policy or RetryPolicy()
        self.clock = clock
        self.provisioner = provisioner or ManualProvisioner()

    # -- templates ---------------------------------------------------------

    def create_template(
        self,
        name: str,
        script: str,
        parameters: list[ParameterDefinition],
        declared_metrics: list[MetricDeclaration],
    ) -> StudyTemplate:
        template = StudyTemplate(
            id=new_id(),
            name=name,
            script=script,
            parameters=tuple(parameters),
            declared_metrics=tuple(declared_metrics),
            created_at=self.clock(),
        )
        errors = validate_template(template)
        if errors:
            raise ValidationFailure(errors)
        with self.store.transaction() as cur:
            self.store.put_template(cur, template)
        return template

    def get_template(self, template_id: str) -> StudyTemplate:
        with self.store.snapshot() as cur:
            template = self.store.get_template(cur, template_id)
        if template is None:
            raise UnknownTemplateError(f"no template {template_id!r}")
        return template

    def list_templates(self) -> list[StudyTemplate]:
        with self.store.snapshot() as cur:
            return self.store.list_templates(cur)

    # -- study lifecycle -----------------------------------------------------

    def create_study(
        self,
        template_id: str,
        bound_values: dict[str, list[ParamValue]],
        repetitions: int,
        base_seed: int,
        provenance: ProvenanceInfo | None = None,
    ) -> Study:
        with self.store.transaction() as cur:
            template = self.store.get_template(cur, template_id)
            if template is None:
                raise UnknownTemplateError(f"no template {template_id!r}")
            study = Study(
                id=new_id(),
                template_id=template_id,
                bound_values={k: tuple(v) for k, v in bound_values.items()},
                repetitions=repetitions,
                base_seed=base_seed,
                provenance=provenance or ProvenanceInfo(),
                status=StudyStatus.DRAFT,
                created_at=self.clock(),
            )
            errors = validate_study(template, study)
            if errors:
                raise ValidationFailure(errors)
            self.store.put_study(cur, study)
        return study

    def get_study(self, study_id: str) -> Study:
        with self.store.snapshot() as cur:
            study = self.store.get_study(cur, study_id)
        if study is None:
            raise UnknownStudyError(f"no study {study_id!r}")
        return study

    def list_studies(self) -> list[Study]:
        with self.store.snapshot() as cur:
            return self.store.list_studies(cur)

    def start_study(self, study_id: str) -> StudyProgress:
        """Materialize all instances and open the study for dispatch (atomic)."""
        with self.store.transaction() as cur:
            study = self.store.get_study(cur, study_id)
            if study is None:
                raise UnknownStudyError(f"no study {study_id!r}")
            if study.status is not StudyStatus.DRAFT:
                raise WrongStateError(
                    f"study {study_id!r} is {study.status.value}, expected draft"
                )
            template = self.store.get_template(cur, study.template_id)
            instances = expand_study(template, study)
            self.store.insert_instances(cur, instances)
            self.store.set_study_status(cur, study_id, StudyStatus.RUNNING)
            return self._progress_locked(cur, study_id)

    def cancel_study(self, study_id: str) -> StudyProgress:
        with self.store.transaction() as cur:
            study = self.store.get_study(cur, study_id)
            if study is None:
                raise UnknownStudyError(f"no study {study_id!r}")
            if study.status is not StudyStatus.RUNNING:
                raise WrongStateError(
                    f"study {study_id!r} is {study.status.value}, expected running"
                )
            for lease in self.store.leases_for_study(cur, study_id):
                self.store.delete_lease(cur, lease["experiment_id"])
                self.store.set_worker_experiment(cur, lease["worker_id"], None)
            for instance in self.store.list_instances(cur, study_id):
                if instance.status not in TERMINAL_STATUSES:
                    self._transition(cur, instance, ExperimentStatus.CANCELED)
            self.store.set_study_status(cur, study_id, StudyStatus.CANCELED)
            return self._progress_locked(cur, study_id)

    def progress(self, study_id: str) -> StudyProgress:
        with self.store.snapshot() as cur:
            study = self.store.get_study(cur, study_id)
            if study is None:
                raise UnknownStudyError(f"no study {study_id!r}")
            return self._progress_locked(cur, study_id)

    def _progress_locked(self, cur, study_id: str) -> StudyProgress:
        study = self.store.get_study(cur, study_id)
        counts = self.store.status_counts(cur, study_id)
        now = self.clock()
        elapsed_min = max((now - study.created_at) / 60.0, 1e-9)
        finished = counts[ExperimentStatus.FINISHED.value]
        throughput = finished / elapsed_min if finished else 0.0
        eta: float | None = None
        mean_s = self.store.mean_duration_s(cur, study_id)
        if finished >= 1 and mean_s is not None:
            remaining = (
                counts[ExperimentStatus.PENDING.value]
                + counts[ExperimentStatus.LEASED.value]
                + counts[ExperimentStatus.RUNNING.value]
            )
            active = sum(
                1
                for w in self.store.list_workers(cur)
                if now - w["last_heartbeat"] <= self.policy.offline_threshold_s
            )
            eta = remaining * mean_s / max(active, 1)
        return StudyProgress(
            study_id=study_id,
            status=study.status.value,
            counts=counts,
            throughput_per_min=throughput,
            eta_s=eta,
        )

    def list_instances(self, study_id: str) -> list[ExperimentInstance]:
        with self.store.snapshot() as cur:
            if self.store.get_study(cur, study_id) is None:
                raise UnknownStudyError(f"no study {study_id!r}")
            return self.store.list_instances(cur, study_id)

    # -- workers -------------------------------------------------------------

    def register_worker(self, labels: list[str]) -> WorkerInfo:
        worker_id = new_id()
        now = self.clock()
        with self.store.transaction() as cur:
            self.store.put_worker(cur, worker_id, list(labels), now)
        return WorkerInfo(
            id=worker_id,
            labels=list(labels),
            last_heartbeat=now,
            state="idle",
            current_experiment=None,
        )

    def heartbeat(self, worker_id: str) -> WorkerInfo:
        with self.store.transaction() as cur:
            row = self.store.get_worker(cur, worker_id)
            if row is None:
                raise UnknownWorkerError(f"no worker {worker_id!r}")
            now = self.clock()
            self.store.touch_worker(cur, worker_id, now)
            row = self.store.get_worker(cur, worker_id)
            return self._worker_info(row, now)

    def list_workers(self) -> list[WorkerInfo]:
        now = self.clock()
        with self.store.snapshot() as cur:
            return [self._worker_info(r, now) for r in self.store.list_workers(cur)]

    def _worker_info(self, row, now: float) -> WorkerInfo:
        # A silent worker counts as offline even while it still holds a lease;
        # the next reap pass expires that lease and restores busy/idle meaning.
        if now - row["last_heartbeat"] > self.policy.offline_threshold_s:
            state = "offline"
        elif row["current_experiment"]:
            state = "busy"
        else:
            state = "idle"
        return WorkerInfo(
            id=row["id"],
            labels=json.loads(row["labels"]),
            last_heartbeat=row["last_heartbeat"],
            state=state,
            current_experiment=row["current_experiment"],
        )

    # -- dispatch --------------------------------------------------------------

    def acquire_next(self, worker_id: str) -> dict | None:
        """Atomically lease the oldest pending experiment to an idle worker.

        Returns None when no pending work exists. The response bundles the
        instance, the template script, the rendered parameter document, and
        the lease.
        """
        with self.store.transaction() as cur:
            worker = self.store.get_worker(cur, worker_id)
            if worker is None:
                raise UnknownWorkerError(f"no worker {worker_id!r}")
            now = self.clock()
            self.store.touch_worker(cur, worker_id, now)
            if self.store.lease_for_worker(cur, worker_id) is not None:
                raise WorkerBusyError(f"worker {worker_id!r} already holds a lease")
            instance = self.store.oldest_pending(cur)
            if instance is None:
                return None
            attempt = instance.attempt + 1
            self._transition(cur, instance, ExperimentStatus.LEASED, attempt=attempt)
            expires = now + self.policy.lease_duration_s
            self.store.insert_lease(cur, instance.id, worker_id, now, expires, attempt)
            self.store.set_worker_experiment(cur, worker_id, instance.id)
            study = self.store.get_study(cur, instance.study_id)
            template = self.store.get_template(cur, study.template_id)
            lease = Lease(
                experiment_id=instance.id,
                worker_id=worker_id,
                granted_at=now,
                expires_at=expires,
                attempt=attempt,
            )
            leased = dataclasses.replace(
                instance, status=ExperimentStatus.LEASED, attempt=attempt
            )
            return {
                "experiment": instance_to_doc(leased),
                "script": template.script,
                "params_document": {
                    "experiment_id": instance.id,
                    "seed": instance.seed,
                    "params": assignment_to_doc(instance.assignment),
                },
                "lease": lease.to_doc(),
            }

    def _live_lease(self, cur, experiment_id: str, worker_id: str):
        lease = self.store.get_lease(cur, experiment_id)
        if lease is None:
            raise LeaseExpiredError(f"no live lease for experiment {experiment_id!r}")
        if lease["worker_id"] != worker_id:
            raise LeaseMismatchError(
                f"experiment {experiment_id!r} is leased to a different worker"
            )
        if lease["expires_at"] <= self.clock():
            raise LeaseExpiredError(f"lease for experiment {experiment_id!r} has expired")
        return lease

    def report_started(self, experiment_id: str, worker_id: str) -> None:
        with self.store.transaction() as cur:
            instance = self.store.get_instance(cur, experiment_id)
            if instance is None:
                raise UnknownExperimentError(f"no experiment {experiment_id!r}")
            self._live_lease(cur, experiment_id, worker_id)
            self.store.touch_worker(cur, worker_id, self.clock())
            self._transition(
                cur, instance, ExperimentStatus.RUNNING, started_at=self.clock()
            )

    def report_result(
        self,
        experiment_id: str,
        worker_id: str,
        success: bool,
        detail: str | None = None,
    ) -> ExperimentStatus:
        with self.store.transaction() as cur:
            instance = self.store.get_instance(cur, experiment_id)
            if instance is None:
                raise UnknownExperimentError(f"no experiment {experiment_id!r}")
            if instance.status in TERMINAL_STATUSES:
                raise AlreadyTerminalError(
                    f"experiment {experiment_id!r} is already {instance.status.value}"
                )
            try:
                self._live_lease(cur, experiment_id, worker_id)
            except (LeaseExpiredError, LeaseMismatchError):
                log.warning(
                    "discarding late result for experiment %s from worker %s",
                    experiment_id,
                    worker_id,
                )
                raise
            now = self.clock()
            self.store.touch_worker(cur, worker_id, now)
            # Tolerate a lost report_started: lift leased to running first.
            if instance.status is ExperimentStatus.LEASED:
                self._transition(cur, instance, ExperimentStatus.RUNNING, started_at=now)
                instance = self.store.get_instance(cur, experiment_id)
            if success:
                final = ExperimentStatus.FINISHED
                self._transition(cur, instance, final, finished_at=now, exit_detail=None)
            elif instance.attempt >= self.policy.max_attempts:
                final = ExperimentStatus.FAILED
                self._transition(
                    cur, instance, final, finished_at=now, exit_detail=detail or "failed"
                )
            else:
                final = ExperimentStatus.PENDING
                self._transition(
                    cur,
                    instance,
                    final,
                    exit_detail=detail or "retrying",
                    started_at=None,
                )
            self.store.delete_lease(cur, experiment_id)
            self.store.set_worker_experiment(cur, worker_id, None)
            self._maybe_finish_study(cur, instance.study_id)
            return final

    # -- record ingestion -----------------------------------------------------

    def ingest_metrics(self, experiment_id: str, records: list[dict]) -> int:
        with self.store.transaction() as cur:
            instance = self._ingestable(cur, experiment_id)
            started = self.store.experiment_started_at(cur, experiment_id)
            count = 0
            for raw in records:
                record = self._parse_metric(experiment_id, raw, started)
                record = MetricRecord(
                    experiment_id=record.experiment_id,
                    metric=record.metric,
                    seq=self.store.next_seq(cur, experiment_id, record.metric),
                    value=record.value,
                    wall_offset_ms=record.wall_offset_ms,
                )
                self.store.insert_metric(cur, record)
                count += 1
            return count

    def ingest_logs(self, experiment_id: str, records: list[dict]) -> int:
        with self.store.transaction() as cur:
            self._ingestable(cur, experiment_id)
            count = 0
            for raw in records:
                level = raw.get("level", "info")
                try:
                    level = LogLevel(level)
                except ValueError:
                    raise ValidationFailure(f"invalid log level {level!r}") from None
                message = raw.get("message")
                if not isinstance(message, str):
                    raise ValidationFailure("log message must be text")
                offset = raw.get("wall_offset_ms", 0)
                if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
                    raise ValidationFailure("wall_offset_ms must be a nonnegative integer")
                self.store.insert_log(
                    cur,
                    LogRecord(
                        experiment_id=experiment_id,
                        level=level,
                        message=message,
                        wall_offset_ms=offset,
                    ),
                )
                count += 1
            return count

    def _ingestable(self, cur, experiment_id: str) -> ExperimentInstance:
        instance = self.store.get_instance(cur, experiment_id)
        if instance is None:
            raise UnknownExperimentError(f"no experiment {experiment_id!r}")
        if instance.status in TERMINAL_STATUSES:
            raise TerminalStateError(
                f"experiment {experiment_id!r} is {instance.status.value}; records rejected"
            )
        if instance.status not in (ExperimentStatus.RUNNING, ExperimentStatus.LEASED):
            raise WrongStateError(
                f"experiment {experiment_id!r} is {instance.status.value}; records rejected"
            )
        return instance

    def _parse_metric(
        self, experiment_id: str, raw: dict, started_at: float | None
    ) -> MetricRecord:
        name = raw.get("metric")
        if not isinstance(name, str) or not IDENTIFIER_RE.match(name):
            raise ValidationFailure(f"invalid metric name {name!r}")
        value = raw.get("value")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationFailure(f"metric {name!r}: value must be a number")
        value = float(value)
        if not math.isfinite(value):
            raise ValidationFailure(f"metric {name!r}: value must be finite")
        offset = raw.get("wall_offset_ms")
        if offset is None:
            offset = (
                max(0, int((self.clock() - started_at) * 1000)) if started_at else 0
            )
        if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
            raise ValidationFailure(f"metric {name!r}: wall_offset_ms must be >= 0")
        return MetricRecord(
            experiment_id=experiment_id, metric=name, seq=0, value=value, wall_offset_ms=offset
        )

    # -- maintenance ------------------------------------------------------------

    def reap(self, now: float | None = None) -> list[dict]:
        """Release expired leases and expire leases of silent workers."""
        now = self.clock() if now is None else now
        actions: list[dict] = []
        with self.store.transaction() as cur:
            for worker in self.store.list_workers(cur):
                if now - worker["last_heartbeat"] > self.policy.offline_threshold_s:
                    lease = self.store.lease_for_worker(cur, worker["id"])
                    if lease is not None:
                        actions.append(self._release_lease(cur, lease, now, "worker offline"))
            for lease in self.store.expired_leases(cur, now):
                actions.append(self._release_lease(cur, lease, now, "lease expired"))
        return actions

    def _release_lease(self, cur, lease, now: float, reason: str) -> dict:
        experiment_id = lease["experiment_id"]
        instance = self.store.get_instance(cur, experiment_id)
        self.store.delete_lease(cur, experiment_id)
        self.store.set_worker_experiment(cur, lease["worker_id"], None)
        outcome = "released"
        if instance is not None and instance.status not in TERMINAL_STATUSES:
            if instance.attempt >= self.policy.max_attempts:
                self._transition(
                    cur,
                    instance,
                    ExperimentStatus.FAILED,
                    finished_at=now,
                    exit_detail=reason,
                )
                outcome = "failed"
                self._maybe_finish_study(cur, instance.study_id)
            else:
                self._transition(cur, instance, ExperimentStatus.PENDING, exit_detail=reason)
                outcome = "requeued"
        log.info("reap: %s experiment %s (%s)", outcome, experiment_id, reason)
        return {
            "experiment_id": experiment_id,
            "worker_id": lease["worker_id"],
            "outcome": outcome,
            "reason": reason,
        }

    # -- internals -------------------------------------------------------------

    def _transition(
        self,
        cur,
        instance: ExperimentInstance,
        new_status: ExperimentStatus,
        **columns,
    ) -> None:
        if not can_transition(instance.status, new_status):
            raise WrongStateError(
                f"experiment {instance.id!r}: illegal transition "
                f"{instance.status.value} -> {new_status.value}"
            )
        self.store.update_instance_status(cur, instance.id, new_status, **columns)

    def _maybe_finish_study(self, cur, study_id: str) -> None:
        study = self.store.get_study(cur, study_id)
        if study is None or study.status is not StudyStatus.RUNNING:
            return
        if not self.store.has_live_instances(cur, study_id):
            self.store.set_study_status(cur, study_id, StudyStatus.FINISHED)
