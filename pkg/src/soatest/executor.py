"""Running test cases against the services under test.

A case travels: typed args -> canonical XML request -> middleware ->
protocol message -> agent -> adapter -> service, and the reply takes the
reverse path back to a typed value.  The expected side is computed
locally first (oracle, explicit value or golden baseline).  No failure is
fatal; each becomes a :class:`~soatest.monitor.Failure` in the record.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

from soatest.adapters import DEFAULT_TIMEOUT_S
from soatest.agents import AgentPool
from soatest.codegen import CodeGen, evaluate_oracle
from soatest.errors import (
    AcquireTimeout,
    ArgumentTypeError,
    ArityMismatch,
    HarnessError,
    MalformedRequest,
    MalformedResponse,
    OracleAbsent,
    OracleFailure,
    TransportError,
    UnknownOperation,
    UnknownService,
)
from soatest.middleware import (
    ResponseStatus,
    TestRequest,
    decode_request,
    encode_request,
    from_protocol,
    route,
    to_protocol,
)
from soatest.monitor import Failure, Outcome, Reason, Verdict
from soatest.registry import Registry
from soatest.store import Journal
from soatest.testgen import ExpectedKind, TestCase
from soatest.values import TypedValue, parse_value

log = logging.getLogger(__name__)


@dataclass
class ExecutionRecord:
    case_id: str
    run_id: str
    service_id: int
    expected: Outcome
    actual: Outcome
    latency_s: float = 0.0
    agent_id: int | None = None
    server: str | None = None
    verdict: Verdict | None = None


class Executor:
    def __init__(
        self,
        registry: Registry,
        journal: Journal,
        codegen: CodeGen,
        pool: AgentPool,
        *,
        acquire_timeout: float = DEFAULT_TIMEOUT_S,
        dispatch_timeout: float = DEFAULT_TIMEOUT_S,
    ) -> None:
        self.registry = registry
        self.journal = journal
        self.codegen = codegen
        self.pool = pool
        self.acquire_timeout = acquire_timeout
        self.dispatch_timeout = dispatch_timeout

    def _expected(self, case: TestCase) -> Outcome:
        source = case.expected_source
        if source.kind is ExpectedKind.EXPLICIT:
            return source.value
        if source.kind is ExpectedKind.GOLDEN:
            return self.journal.baseline(case.case_id)
        try:
            plan = self.codegen.plan_for(case.service_id, case.op_name)
            return evaluate_oracle(plan, case.args)
        except (OracleAbsent, OracleFailure, ArgumentTypeError) as exc:
            return Failure(Reason.ORACLE_FAILURE, str(exc))

    def _actual(self, case: TestCase, record: ExecutionRecord) -> Outcome:
        try:
            descriptor = self.registry.lookup_service(case.service_id)
            sig = descriptor.operation(case.op_name)
            req = TestRequest(case.service_id, case.op_name, tuple(a.text() for a in case.args))
            received = decode_request(encode_request(req))
            route(received, self.registry)
            wire = to_protocol(received, descriptor)
        except (UnknownService, UnknownOperation, ArityMismatch, ArgumentTypeError, MalformedRequest, ValueError) as exc:
            return Failure(Reason.MALFORMED, f"cannot build request: {exc}")

        try:
            handle = self.pool.acquire_agent(self.acquire_timeout)
        except AcquireTimeout as exc:
            return Failure(Reason.TRANSPORT_ERROR, str(exc))
        record.agent_id = handle.agent_id
        start = time.perf_counter()
        try:
            reply = self.pool.dispatch(handle, wire, case.service_id, self.dispatch_timeout)
        except TransportError as exc:
            return Failure(Reason.TRANSPORT_ERROR, f"{type(exc).__name__}: {exc}")
        finally:
            record.latency_s = time.perf_counter() - start
            record.server = str(handle.server) if handle.server else None

        try:
            resp = from_protocol(reply, descriptor)
        except MalformedResponse as exc:
            return Failure(Reason.MALFORMED, str(exc))
        if resp.status is ResponseStatus.FAULT:
            return Failure(Reason.FAULT_RESPONSE, resp.fault_text or "")
        try:
            return parse_value(resp.value or "", sig.return_type)
        except ValueError as exc:
            return Failure(Reason.MALFORMED, f"result not a {sig.return_type.value}: {exc}")

    def execute_case(self, case: TestCase, run_id: str) -> ExecutionRecord:
        record = ExecutionRecord(case.case_id, run_id, case.service_id, expected=None, actual=None)
        try:
            record.expected = self._expected(case)
            record.actual = self._actual(case, record)
            if (
                case.expected_source.kind is ExpectedKind.GOLDEN
                and record.expected is None
                and isinstance(record.actual, TypedValue)
            ):
                self.journal.append("BASELINE", {"case_id": case.case_id, "value": record.actual.to_dict()})
                record.expected = record.actual
        except (HarnessError, OSError, ValueError) as exc:
            log.exception("case %s failed unexpectedly", case.case_id)
            record.actual = Failure(Reason.TRANSPORT_ERROR, f"{type(exc).__name__}: {exc}")
        return record

    def execute_suite(
        self,
        cases: Sequence[TestCase],
        run_id: str,
        parallelism: int | None = None,
    ) -> list[ExecutionRecord]:
        if not cases:
            return []
        workers = max(1, parallelism or self.pool.size)
        if workers == 1:
            return [self.execute_case(c, run_id) for c in cases]
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="soatest-exec") as pool:
            return list(pool.map(lambda c: self.execute_case(c, run_id), cases))
