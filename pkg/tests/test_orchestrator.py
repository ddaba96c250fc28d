import random
import threading

import pytest

from maci.model import (
    ExperimentStatus,
    MetricDeclaration,
    ParamKind,
    ParamValue,
    ParameterDefinition,
    StudyStatus,
)
from maci.orchestrator import (
    AlreadyTerminalError,
    LeaseExpiredError,
    LeaseMismatchError,
    Orchestrator,
    RetryPolicy,
    TerminalStateError,
    UnknownStudyError,
    UnknownWorkerError,
    ValidationFailure,
    WorkerBusyError,
    WrongStateError,
)
from maci.store import Store


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def orch(tmp_path, clock):
    store = Store(tmp_path / "maci.db")
    yield Orchestrator(store, RetryPolicy(), clock=clock)
    store.close()


def push_template(orch, values=("a", "b", "c"), metrics=()):
    return orch.create_template(
        name="demo",
        script="#!/bin/sh\nexit 0\n",
        parameters=[
            ParameterDefinition(
                name="p",
                kind=ParamKind.CONFIGURATION,
                values=tuple(ParamValue.of(v) for v in values),
            )
        ],
        declared_metrics=list(metrics),
    )


def started_study(orch, values=("a", "b", "c"), repetitions=1):
    template = push_template(orch, values)
    study = orch.create_study(
        template.id,
        {"p": [ParamValue.of(v) for v in values]},
        repetitions=repetitions,
        base_seed=1,
    )
    orch.start_study(study.id)
    return template, study


# -- study lifecycle ----------------------------------------------------------


def test_create_study_materializes_nothing(orch):
    template = push_template(orch)
    study = orch.create_study(template.id, {"p": [ParamValue.of("a")]}, 1, 0)
    assert study.status is StudyStatus.DRAFT
    assert orch.progress(study.id).total == 0


def test_create_study_rejects_unbound_value(orch):
    template = push_template(orch)
    with pytest.raises(ValidationFailure) as err:
        orch.create_study(template.id, {"p": [ParamValue.of("zzz")]}, 1, 0)
    assert "p" in str(err.value)


def test_create_study_rejects_zero_repetitions(orch):
    template = push_template(orch)
    with pytest.raises(ValidationFailure):
        orch.create_study(template.id, {"p": [ParamValue.of("a")]}, 0, 0)


def test_start_study_materializes_instances(orch):
    template = push_template(orch)
    study = orch.create_study(
        template.id, {"p": [ParamValue.of("a"), ParamValue.of("b")]}, 3, 0
    )
    progress = orch.start_study(study.id)
    assert progress.counts["pending"] == 6
    assert progress.status == "running"


def test_start_study_twice_is_wrong_state(orch):
    _, study = started_study(orch)
    with pytest.raises(WrongStateError):
        orch.start_study(study.id)


def test_start_unknown_study(orch):
    with pytest.raises(UnknownStudyError):
        orch.start_study("nope")


# -- workers ---------------------------------------------------------------------


def test_register_worker_idle(orch):
    worker = orch.register_worker(["mininet"])
    assert worker.state == "idle"
    assert worker.current_experiment is None


def test_silent_worker_goes_offline_and_recovers(orch, clock):
    worker = orch.register_worker([])
    clock.advance(31)
    assert orch.list_workers()[0].state == "offline"
    refreshed = orch.heartbeat(worker.id)
    assert refreshed.state == "idle"


def test_heartbeat_unknown_worker(orch):
    with pytest.raises(UnknownWorkerError):
        orch.heartbeat("ghost")


# -- dispatch ----------------------------------------------------------------------


def test_acquire_returns_work_in_fifo_order(orch):
    _, study = started_study(orch, values=("a", "b"))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    assert grant is not None
    assert grant["experiment"]["combo_index"] == 0
    assert grant["experiment"]["status"] == "leased"
    assert grant["experiment"]["attempt"] == 1
    assert grant["script"].startswith("#!/bin/sh")
    assert grant["params_document"]["params"] == {"p": "a"}


def test_acquire_empty_when_no_work(orch):
    worker = orch.register_worker([])
    assert orch.acquire_next(worker.id) is None


def test_acquire_twice_without_completion_is_busy(orch):
    _, study = started_study(orch)
    worker = orch.register_worker([])
    assert orch.acquire_next(worker.id) is not None
    with pytest.raises(WorkerBusyError):
        orch.acquire_next(worker.id)


def test_concurrent_acquire_never_duplicates(orch):
    # Two pending instances, three competing workers, repeated many times.
    for round_no in range(100):
        _, study = started_study(orch, values=(f"x{round_no}", f"y{round_no}"))
        workers = [orch.register_worker([]) for _ in range(3)]
        grants = []
        errors = []

        def contend(worker_id):
            try:
                grants.append(orch.acquire_next(worker_id))
            except Exception as exc:  # pragma: no cover - failure diagnostics
                errors.append(exc)

        threads = [
            threading.Thread(target=contend, args=(w.id,)) for w in workers
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        nonempty = [g for g in grants if g is not None]
        assert len(nonempty) == 2
        assert len(grants) == 3
        ids = {g["experiment"]["id"] for g in nonempty}
        assert len(ids) == 2
        orch.cancel_study(study.id)


def test_report_started_moves_to_running(orch):
    _, study = started_study(orch)
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    orch.report_started(grant["experiment"]["id"], worker.id)
    instances = orch.list_instances(study.id)
    statuses = {i.id: i.status for i in instances}
    assert statuses[grant["experiment"]["id"]] is ExperimentStatus.RUNNING


def test_report_started_wrong_worker_is_mismatch(orch):
    _, study = started_study(orch)
    worker = orch.register_worker([])
    other = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    with pytest.raises(LeaseMismatchError):
        orch.report_started(grant["experiment"]["id"], other.id)


def test_report_started_after_expiry(orch, clock):
    _, study = started_study(orch)
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    clock.advance(601)
    with pytest.raises(LeaseExpiredError):
        orch.report_started(grant["experiment"]["id"], worker.id)


def test_success_finishes_and_frees_worker(orch):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    exp_id = grant["experiment"]["id"]
    orch.report_started(exp_id, worker.id)
    final = orch.report_result(exp_id, worker.id, success=True)
    assert final is ExperimentStatus.FINISHED
    assert orch.list_workers()[0].state == "idle"
    assert orch.get_study(study.id).status is StudyStatus.FINISHED


def test_failure_requeues_until_max_attempts(orch):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])

    grant = orch.acquire_next(worker.id)
    exp_id = grant["experiment"]["id"]
    orch.report_started(exp_id, worker.id)
    assert orch.report_result(exp_id, worker.id, False, "exit_code=3") is (
        ExperimentStatus.PENDING
    )

    grant = orch.acquire_next(worker.id)
    assert grant["experiment"]["id"] == exp_id
    assert grant["experiment"]["attempt"] == 2
    orch.report_started(exp_id, worker.id)
    assert orch.report_result(exp_id, worker.id, False, "exit_code=3") is (
        ExperimentStatus.FAILED
    )
    instance = orch.list_instances(study.id)[0]
    assert instance.exit_detail == "exit_code=3"
    assert orch.get_study(study.id).status is StudyStatus.FINISHED


def test_result_replay_after_success_is_already_terminal(orch):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    exp_id = grant["experiment"]["id"]
    orch.report_started(exp_id, worker.id)
    orch.report_result(exp_id, worker.id, True)
    with pytest.raises(AlreadyTerminalError):
        orch.report_result(exp_id, worker.id, True)


def test_result_without_started_still_lands(orch):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    final = orch.report_result(grant["experiment"]["id"], worker.id, True)
    assert final is ExperimentStatus.FINISHED


# -- ingestion --------------------------------------------------------------------


def ingest_ready(orch):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    exp_id = grant["experiment"]["id"]
    orch.report_started(exp_id, worker.id)
    return study, worker, exp_id


def test_metric_seq_assigned_server_side(orch):
    study, worker, exp_id = ingest_ready(orch)
    orch.ingest_metrics(exp_id, [{"metric": "stallings", "value": 2}])
    orch.ingest_metrics(exp_id, [{"metric": "stallings", "value": 3}])
    with orch.store.snapshot() as cur:
        records = orch.store.metrics_for_experiment(cur, exp_id)
    assert [(r.seq, r.value) for r in records] == [(0, 2.0), (1, 3.0)]


def test_metrics_accepted_while_leased(orch):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    assert orch.ingest_metrics(grant["experiment"]["id"], [{"metric": "m", "value": 1}]) == 1


def test_metrics_rejected_when_terminal(orch):
    study, worker, exp_id = ingest_ready(orch)
    orch.report_result(exp_id, worker.id, True)
    with pytest.raises(TerminalStateError):
        orch.ingest_metrics(exp_id, [{"metric": "m", "value": 1}])


def test_metric_validation(orch):
    study, worker, exp_id = ingest_ready(orch)
    with pytest.raises(ValidationFailure):
        orch.ingest_metrics(exp_id, [{"metric": "1bad", "value": 1}])
    with pytest.raises(ValidationFailure):
        orch.ingest_metrics(exp_id, [{"metric": "m", "value": float("nan")}])
    with pytest.raises(ValidationFailure):
        orch.ingest_metrics(exp_id, [{"metric": "m", "value": "high"}])


def test_log_ingestion(orch):
    study, worker, exp_id = ingest_ready(orch)
    orch.ingest_logs(exp_id, [{"level": "warn", "message": "slow start"}])
    with orch.store.snapshot() as cur:
        logs = orch.store.logs_for_experiment(cur, exp_id)
    assert len(logs) == 1
    assert logs[0].message == "slow start"


# -- reaping ------------------------------------------------------------------------


def test_reap_requeues_expired_lease(orch, clock):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    orch.acquire_next(worker.id)
    clock.advance(601)
    actions = orch.reap()
    assert [a["outcome"] for a in actions] == ["requeued"]
    assert orch.progress(study.id).counts["pending"] == 1
    assert orch.list_workers()[0].current_experiment is None


def test_reap_fails_after_max_attempts(orch, clock):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    orch.acquire_next(worker.id)
    clock.advance(601)
    orch.reap()
    orch.heartbeat(worker.id)
    orch.acquire_next(worker.id)
    clock.advance(601)
    actions = orch.reap()
    assert [a["outcome"] for a in actions] == ["failed"]
    counts = orch.progress(study.id).counts
    assert counts["failed"] == 1
    assert orch.get_study(study.id).status is StudyStatus.FINISHED


def test_reap_noop_when_nothing_expired(orch):
    _, study = started_study(orch)
    worker = orch.register_worker([])
    orch.acquire_next(worker.id)
    assert orch.reap() == []


def test_reap_expires_silent_workers_leases(orch, clock):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    orch.acquire_next(worker.id)
    clock.advance(31)  # offline threshold crossed, lease itself still live
    actions = orch.reap()
    assert len(actions) == 1
    assert actions[0]["reason"] == "worker offline"
    assert orch.progress(study.id).counts["pending"] == 1


# -- cancel ---------------------------------------------------------------------------


def test_cancel_study_cancels_live_instances(orch):
    _, study = started_study(orch, values=("a", "b", "c"))
    progress = orch.cancel_study(study.id)
    assert progress.counts["canceled"] == 3
    assert progress.status == "canceled"


def test_cancel_preserves_finished(orch):
    _, study = started_study(orch, values=("a", "b"))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    orch.report_started(grant["experiment"]["id"], worker.id)
    orch.report_result(grant["experiment"]["id"], worker.id, True)
    progress = orch.cancel_study(study.id)
    assert progress.counts["finished"] == 1
    assert progress.counts["canceled"] == 1


def test_cancel_finished_study_is_wrong_state(orch):
    _, study = started_study(orch, values=("a",))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    orch.report_result(grant["experiment"]["id"], worker.id, True)
    with pytest.raises(WrongStateError):
        orch.cancel_study(study.id)


def test_cancel_revokes_leases(orch):
    _, study = started_study(orch)
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    orch.cancel_study(study.id)
    with pytest.raises(AlreadyTerminalError):
        orch.report_result(grant["experiment"]["id"], worker.id, True)
    assert orch.list_workers()[0].current_experiment is None


# -- progress -----------------------------------------------------------------------


def test_progress_counts_conserved(orch, clock):
    _, study = started_study(orch, values=("a", "b", "c"), repetitions=2)
    worker = orch.register_worker([])
    total = orch.progress(study.id).total
    assert total == 6
    for _ in range(3):
        grant = orch.acquire_next(worker.id)
        orch.report_started(grant["experiment"]["id"], worker.id)
        clock.advance(5)
        orch.report_result(grant["experiment"]["id"], worker.id, True)
        assert orch.progress(study.id).total == 6
    progress = orch.progress(study.id)
    assert progress.counts["finished"] == 3
    assert progress.counts["pending"] == 3


def test_progress_eta_appears_after_first_finish(orch, clock):
    _, study = started_study(orch, values=("a", "b"))
    worker = orch.register_worker([])
    assert orch.progress(study.id).eta_s is None
    grant = orch.acquire_next(worker.id)
    orch.report_started(grant["experiment"]["id"], worker.id)
    clock.advance(10)
    orch.report_result(grant["experiment"]["id"], worker.id, True)
    progress = orch.progress(study.id)
    assert progress.eta_s == pytest.approx(10.0)
    assert progress.throughput_per_min >= 0


def test_attempt_never_exceeds_max(orch, clock):
    policy = RetryPolicy(max_attempts=3)
    orch_local = Orchestrator(orch.store, policy, clock=clock)
    _, study = started_study(orch_local, values=("a",))
    worker = orch_local.register_worker([])
    for _ in range(10):
        grant = orch_local.acquire_next(worker.id)
        if grant is None:
            break
        orch_local.report_started(grant["experiment"]["id"], worker.id)
        orch_local.report_result(grant["experiment"]["id"], worker.id, False, "boom")
    instance = orch_local.list_instances(study.id)[0]
    assert instance.attempt == 3
    assert instance.status is ExperimentStatus.FAILED


# -- crash recovery ---------------------------------------------------------------


def test_reopened_store_preserves_counts(tmp_path, clock):
    store = Store(tmp_path / "maci.db")
    orch = Orchestrator(store, clock=clock)
    _, study = started_study(orch, values=("a", "b", "c"))
    worker = orch.register_worker([])
    grant = orch.acquire_next(worker.id)
    orch.report_started(grant["experiment"]["id"], worker.id)
    orch.report_result(grant["experiment"]["id"], worker.id, True)
    before = orch.progress(study.id).counts
    store.close()

    reopened = Store(tmp_path / "maci.db")
    orch2 = Orchestrator(reopened, clock=clock)
    after = orch2.progress(study.id).counts
    assert after == before
    reopened.close()


def test_schema_mismatch_refuses_to_open(tmp_path):
    store = Store(tmp_path / "maci.db")
    with store.transaction() as cur:
        cur.execute("UPDATE meta SET value = '999' WHERE key = 'schema_version'")
    store.close()
    from maci.store import SchemaMismatchError

    with pytest.raises(SchemaMismatchError):
        Store(tmp_path / "maci.db")


# -- randomized drain (linearizability-flavored safety) ------------------------------


def test_randomized_concurrent_drain_is_safe(tmp_path, clock):
    rng = random.Random(7)
    store = Store(tmp_path / "drain.db")
    policy = RetryPolicy(max_attempts=2, lease_duration_s=50)
    orch = Orchestrator(store, policy, clock=clock)
    template = push_template(orch, values=tuple(f"v{i}" for i in range(30)))
    study = orch.create_study(
        template.id, {"p": [ParamValue.of(f"v{i}") for i in range(30)]}, 1, 0
    )
    orch.start_study(study.id)
    workers = [orch.register_worker([]) for _ in range(4)]

    dispatch_log = []
    log_lock = threading.Lock()

    def run_worker(worker_id):
        local_rng = random.Random(worker_id)
        while True:
            orch.heartbeat(worker_id)
            try:
                grant = orch.acquire_next(worker_id)
            except WorkerBusyError:
                return  # a previous crash left a lease; wait for reap
            if grant is None:
                return
            exp_id = grant["experiment"]["id"]
            with log_lock:
                dispatch_log.append((exp_id, worker_id, grant["experiment"]["attempt"]))
            if local_rng.random() < 0.1:
                return  # crash: drop the lease silently
            try:
                orch.report_started(exp_id, worker_id)
                success = local_rng.random() > 0.15
                orch.report_result(exp_id, worker_id, success, None if success else "x")
            except (LeaseExpiredError, LeaseMismatchError):
                pass

    for _ in range(40):
        threads = [threading.Thread(target=run_worker, args=(w.id,)) for w in workers]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if all(
            i.status.value in ("finished", "failed")
            for i in orch.list_instances(study.id)
        ):
            break
        clock.advance(60)
        orch.reap()
        for w in workers:
            orch.heartbeat(w.id)

    instances = orch.list_instances(study.id)
    assert all(i.status.value in ("finished", "failed") for i in instances)
    assert all(i.attempt <= policy.max_attempts for i in instances)
    # No (experiment, attempt) handed out twice: at-most-once dispatch per attempt.
    grants = [(e, a) for e, _, a in dispatch_log]
    assert len(grants) == len(set(grants))
    store.close()
