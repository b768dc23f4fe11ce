from __future__ import annotations

import threading
import time

import pytest

from soatest.engine import RunConfig
from soatest.mockfleet import FaultMode, MockServiceSpec
from soatest.monitor import Failure, Reason, compare
from soatest.registry import OperationSignature, Protocol
from soatest.testgen import Boundary, ExpectedSource, Explicit, generate_cases, persist_cases
from soatest.values import TypedValue, ValueType

ECHO_INT = OperationSignature("echo_int", (("value", ValueType.INT),), ValueType.INT)


def stored(engine, sid, op, strategy, expected=None):
    cases = generate_cases(engine.registry.lookup_service(sid), op, strategy, expected)
    persist_cases(engine.journal, cases)
    return cases


def executor(engine, **kw):
    return engine.executor(RunConfig(**kw))


def test_worked_example(engine, deploy):
    deploy(MockServiceSpec(5, Protocol.SOAP))
    [case] = stored(engine, 5, "add", Explicit([(10, 20)]))
    rec = executor(engine).execute_case(case, "r1")
    assert rec.expected == TypedValue.int(30)
    assert rec.actual == TypedValue.int(30)
    assert rec.latency_s >= 0
    assert rec.agent_id == 0
    assert rec.server == str(engine.registry.lookup_service(5).endpoints[0])


def test_wrong_answer_fault(engine, deploy):
    f = deploy(MockServiceSpec(5, Protocol.SOAP))
    f.inject_fault(5, FaultMode.OFF_BY_ONE)
    [case] = stored(engine, 5, "add", Explicit([(10, 20)]))
    rec = executor(engine).execute_case(case, "r1")
    assert (rec.expected, rec.actual) == (TypedValue.int(30), TypedValue.int(31))


def test_golden_baseline_recorded_then_used(engine, deploy):
    f = deploy(MockServiceSpec(8, Protocol.REST, operations=("echo",)), oracles=False)
    [case] = stored(engine, 8, "echo", Explicit([("hello",)]), ExpectedSource.golden())
    ex = executor(engine)
    first = ex.execute_case(case, "r1")
    assert first.expected == first.actual == TypedValue.string("hello")
    assert engine.journal.baseline(case.case_id) == TypedValue.string("hello")
    second = ex.execute_case(case, "r2")
    assert second.expected == TypedValue.string("hello")
    f.inject_fault(8, FaultMode.OFF_BY_ONE)
    third = ex.execute_case(case, "r3")
    assert (third.expected, third.actual) == (TypedValue.string("hello"), TypedValue.string("hello1"))
    assert engine.journal.baseline(case.case_id) == TypedValue.string("hello")


def test_golden_not_recorded_from_failure(engine, deploy):
    f = deploy(MockServiceSpec(8, Protocol.REST, operations=("echo",)), oracles=False)
    f.inject_fault(8, FaultMode.SOAP_FAULT)
    [case] = stored(engine, 8, "echo", Explicit([("hello",)]), ExpectedSource.golden())
    rec = executor(engine).execute_case(case, "r1")
    assert isinstance(rec.actual, Failure)
    assert engine.journal.baseline(case.case_id) is None
    assert not compare(rec.expected, rec.actual).successful


@pytest.mark.parametrize(
    "mode,reason",
    [
        (FaultMode.SOAP_FAULT, Reason.FAULT_RESPONSE),
        (FaultMode.MALFORMED_BODY, Reason.MALFORMED),
        (FaultMode.DROP_CONNECTION, Reason.TRANSPORT_ERROR),
        (FaultMode.DELAY, Reason.TRANSPORT_ERROR),
    ],
)
@pytest.mark.parametrize("protocol", [Protocol.SOAP, Protocol.REST, Protocol.LOOPBACK])
def test_failures_are_captured(engine, deploy, mode, reason, protocol):
    f = deploy(MockServiceSpec(5, protocol))
    f.inject_fault(5, mode, delay_ms=5000)
    [case] = stored(engine, 5, "add", Explicit([(10, 20)]))
    rec = executor(engine, dispatch_timeout_s=0.1).execute_case(case, "r1")
    assert rec.expected == TypedValue.int(30)
    assert isinstance(rec.actual, Failure) and rec.actual.reason is reason


def test_dead_server(engine, deploy):
    f = deploy(MockServiceSpec(5, Protocol.SOAP))
    [case] = stored(engine, 5, "add", Explicit([(10, 20)]))
    f.stop()
    rec = executor(engine).execute_case(case, "r1")
    assert rec.actual.reason is Reason.TRANSPORT_ERROR
    assert "ConnectionRefused" in rec.actual.detail


def test_missing_oracle(engine, deploy):
    deploy(MockServiceSpec(5, Protocol.REST), oracles=False)
    [case] = stored(engine, 5, "add", Explicit([(10, 20)]))
    rec = executor(engine).execute_case(case, "r1")
    assert rec.actual == TypedValue.int(30)
    assert rec.expected.reason is Reason.ORACLE_FAILURE


def test_acquire_timeout_captured(engine, deploy):
    deploy(MockServiceSpec(5, Protocol.REST))
    [case] = stored(engine, 5, "add", Explicit([(1, 2)]))
    ex = executor(engine, parallelism=1, acquire_timeout_s=0.01)
    ex.pool.acquire_agent()
    rec = ex.execute_case(case, "r1")
    assert rec.actual.reason is Reason.TRANSPORT_ERROR


def test_empty_suite(engine):
    assert executor(engine).execute_suite([], "r") == []


def test_boundary_suite_against_correct_mock(engine, deploy):
    deploy(MockServiceSpec(5, Protocol.SOAP))
    cases = stored(engine, 5, "add", Boundary())
    records = executor(engine).execute_suite(cases, "r1", 4)
    assert len(records) == 25
    assert all(r.expected == r.actual for r in records)
    # oracle purity: an unchanged mock gives identical pairs
    again = executor(engine).execute_suite(cases, "r2", 4)
    assert [(r.expected, r.actual) for r in again] == [(r.expected, r.actual) for r in records]


def test_order_follows_input_not_completion(engine, custom_service):
    # larger inputs answer sooner, so completion order is reversed
    def slow_echo(args):
        time.sleep(0.002 * (20 - args[0].payload))
        return args[0]

    custom_service(3, ECHO_INT, slow_echo, oracle="echo")
    cases = stored(engine, 3, "echo_int", Explicit([(i,) for i in range(20)]))
    records = executor(engine).execute_suite(cases, "r", 4)
    assert [r.case_id for r in records] == [c.case_id for c in cases]
    assert [r.actual.payload for r in records] == list(range(20))


def test_in_flight_bounded_by_parallelism(engine, custom_service):
    lock = threading.Lock()
    active = [0]
    peak = [0]

    def tracked(args):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.005)
        with lock:
            active[0] -= 1
        return args[0]

    custom_service(3, ECHO_INT, tracked, oracle="echo")
    cases = stored(engine, 3, "echo_int", Explicit([(i,) for i in range(30)]))
    for a in (1, 3):
        peak[0] = 0
        records = executor(engine, parallelism=a).execute_suite(cases, f"r{a}", a)
        assert len(records) == 30
        assert 1 <= peak[0] <= a


def test_records_complete_under_churn(engine, custom_service):
    from soatest.agents import AgentState

    custom_service(3, ECHO_INT, lambda a: (time.sleep(0.002), a[0])[1], oracle="echo")
    cases = stored(engine, 3, "echo_int", Explicit([(i,) for i in range(60)]))
    ex = executor(engine, parallelism=4)
    stop = threading.Event()

    def churn():
        i = 0
        while not stop.is_set():
            ex.pool.set_agent_state(i % 4, AgentState.OFFLINE)
            time.sleep(0.004)
            ex.pool.set_agent_state(i % 4, AgentState.FREE)
            i += 1

    t = threading.Thread(target=churn)
    t.start()
    try:
        records = ex.execute_suite(cases, "r", 4)
    finally:
        stop.set()
        t.join()
    assert len(records) == 60
    assert all(r.expected == r.actual for r in records)
