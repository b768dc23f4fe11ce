"""Orchestration of test runs.

The :class:`Engine` owns one journal and wires the registry, client plans,
executor and monitor together.  It offers three kinds of run:

* ``run_full``        every stored case of the target services;
* ``run_regression``  only the previously SUCCESSFUL cases of the services
                      that were modified;
* ``localize_fault``  a composite scenario end to end, then each involved
                      service in isolation when the composite fails.
"""

from __future__ import annotations

import json
import logging
import time
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from soatest.adapters import AdapterMap, LoopbackHub, default_adapters
from soatest.agents import DEFAULT_POOL_SIZE, AgentPool
from soatest.codegen import CodeGen, evaluate_oracle
from soatest.errors import (
    ArgumentTypeError,
    EmptySelection,
    Inconclusive,
    NoCases,
    OracleAbsent,
    OracleFailure,
)
from soatest.executor import ExecutionRecord, Executor
from soatest.monitor import Failure, Monitor, Reason, RunReport, Verdict, compare
from soatest.registry import Registry
from soatest.store import Journal
from soatest.testgen import Boundary, ExpectedSource, GenStrategy, TestCase, generate_cases, persist_cases, typed_args
from soatest.values import TypedValue, coerce

log = logging.getLogger(__name__)


def new_run_id() -> str:
    return "run-" + uuid.uuid4().hex[:12]


@dataclass
class RunConfig:
    run_id: str | None = None
    parallelism: int = DEFAULT_POOL_SIZE
    acquire_timeout_s: float = 5.0
    dispatch_timeout_s: float = 5.0
    max_localization_iterations: int = 3
    targets: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.targets = tuple(self.targets)
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.max_localization_iterations < 1:
            raise ValueError("max_localization_iterations must be >= 1")
        if self.acquire_timeout_s <= 0 or self.dispatch_timeout_s <= 0:
            raise ValueError("timeouts must be positive")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["targets"] = list(self.targets)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class _Pipe:
    def __repr__(self) -> str:
        return "PIPE"


PIPE = _Pipe()


@dataclass(frozen=True)
class CompositeStep:
    """One call in a composite; with ``pipe`` the previous result is prepended to ``args``."""

    service_id: int
    op_name: str
    args: tuple[Any, ...] = ()
    pipe: bool = False


@dataclass(frozen=True)
class CompositeScenario:
    steps: tuple[CompositeStep, ...]

    def __init__(self, steps: Iterable[CompositeStep | tuple]) -> None:
        parsed = []
        for s in steps:
            if isinstance(s, CompositeStep):
                parsed.append(s)
                continue
            sid, op, *rest = s
            args = tuple(rest[0]) if rest else ()
            pipe = bool(args) and args[0] is PIPE
            parsed.append(CompositeStep(sid, op, args[1:] if pipe else args, pipe))
        if not parsed:
            raise ValueError("a composite scenario needs at least one step")
        if parsed[0].pipe:
            raise ValueError("the first step must have concrete arguments")
        object.__setattr__(self, "steps", tuple(parsed))

    @property
    def service_ids(self) -> list[int]:
        return list(dict.fromkeys(s.service_id for s in self.steps))


@dataclass
class CompositeResult:
    successful: bool
    records: list[ExecutionRecord] = field(default_factory=list)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


class Engine:
    def __init__(
        self,
        journal: Journal,
        *,
        hub: LoopbackHub | None = None,
        adapters: AdapterMap | None = None,
    ) -> None:
        self.journal = journal
        self.registry = Registry(journal)
        self.codegen = CodeGen(self.registry, journal)
        self.monitor = Monitor(journal)
        self.adapters = adapters if adapters is not None else default_adapters(hub)

    def executor(self, config: RunConfig) -> Executor:
        pool = AgentPool(self.registry, config.parallelism, self.adapters, config.dispatch_timeout_s)
        return Executor(
            self.registry,
            self.journal,
            self.codegen,
            pool,
            acquire_timeout=config.acquire_timeout_s,
            dispatch_timeout=config.dispatch_timeout_s,
        )

    def _run(self, cases: Sequence[TestCase], config: RunConfig, kind: str, run_id: str | None = None) -> RunReport:
        run_id = run_id or config.run_id or new_run_id()
        if run_id in self.journal.state.runs:
            raise ValueError(f"run id {run_id!r} already used")
        self.journal.append("RUN", {"run_id": run_id, "phase": "start", "kind": kind, "config": config.to_dict(), "at": _now()})
        started = time.perf_counter()
        records = self.executor(config).execute_suite(cases, run_id, config.parallelism)
        for rec in records:
            rec.verdict = compare(rec.expected, rec.actual)
            self.monitor.mark_result(
                rec.case_id,
                run_id,
                rec.verdict,
                expected=rec.expected,
                actual=rec.actual,
                latency_s=rec.latency_s,
                agent_id=rec.agent_id,
                server=rec.server,
            )
        duration = time.perf_counter() - started
        self.journal.append("RUN", {"run_id": run_id, "phase": "end", "at": _now(), "duration_s": duration})
        log.info("%s run %s: %d cases in %.3fs", kind, run_id, len(records), duration)
        return self.monitor.summarize(run_id)

    def run_full(
        self,
        service_ids: Iterable[int],
        config: RunConfig | None = None,
        strategy: GenStrategy | None = None,
    ) -> RunReport:
        config = config or RunConfig()
        cases: list[TestCase] = []
        for sid in dict.fromkeys(service_ids):
            descriptor = self.registry.lookup_service(sid)
            own = self.journal.cases_for(sid)
            if not own and strategy is not None:
                for op in descriptor.operations:
                    generated = generate_cases(descriptor, op.op_name, strategy)
                    persist_cases(self.journal, generated)
                    own.extend(generated)
            if not own:
                raise NoCases(f"no test cases for service {sid}")
            cases.extend(own)
        return self._run(cases, config, "full")

    def regression_selection(self, modified_service_ids: Iterable[int]) -> list[TestCase]:
        selection: list[TestCase] = []
        for sid in dict.fromkeys(modified_service_ids):
            selection.extend(self.journal.successful_cases_for(sid))
        return selection

    def run_regression(self, modified_service_ids: Iterable[int], config: RunConfig | None = None) -> RunReport:
        modified = list(modified_service_ids)
        selection = self.regression_selection(modified)
        if not selection:
            raise EmptySelection(f"no previously successful cases for services {modified}")
        return self._run(selection, config or RunConfig(), "regression")

    # composite testing and fault localization

    def _check_scenario(self, scenario: CompositeScenario) -> None:
        prev_type = None
        for step in scenario.steps:
            sig = self.registry.signature(step.service_id, step.op_name)
            if not self.codegen.plan_for(step.service_id, step.op_name).has_oracle:
                raise OracleAbsent(f"service {step.service_id} operation {step.op_name} has no oracle")
            arity = len(step.args) + (1 if step.pipe else 0)
            if arity != len(sig.params):
                raise ArgumentTypeError(f"step {step.op_name} needs {len(sig.params)} arguments, scenario gives {arity}")
            if step.pipe and sig.param_types[0] is not prev_type:
                raise ArgumentTypeError(f"cannot pipe {prev_type} into {step.op_name}({sig.param_types[0].value}, ...)")
            prev_type = sig.return_type

    def run_composite(self, scenario: CompositeScenario, config: RunConfig | None = None) -> CompositeResult:
        """Run the steps in order, feeding actual results forward.

        Each step is judged against the oracle chain fed with expected
        results, so a wrong answer anywhere makes the composite fail.
        """
        config = config or RunConfig()
        self._check_scenario(scenario)
        executor = self.executor(config)
        run_id = config.run_id or new_run_id()
        result = CompositeResult(True)
        expected_prev: TypedValue | None = None
        actual_prev: TypedValue | None = None
        for i, step in enumerate(scenario.steps):
            sig = self.registry.signature(step.service_id, step.op_name)
            if step.pipe:
                rest = tuple(coerce(v, t) for v, t in zip(step.args, sig.param_types[1:]))
                expected_args = (expected_prev, *rest)
                actual_args = (actual_prev, *rest)
            else:
                expected_args = actual_args = typed_args(sig, step.args)
            try:
                expected = evaluate_oracle(self.codegen.plan_for(step.service_id, step.op_name), expected_args)
            except OracleFailure as exc:
                result.records.append(
                    ExecutionRecord(f"{run_id}-step{i}", run_id, step.service_id, Failure(Reason.ORACLE_FAILURE, str(exc)), None,
                                    verdict=Verdict.failed(Reason.ORACLE_FAILURE))
                )
                result.successful = False
                return result
            case = TestCase(
                case_id=f"{run_id}-step{i}",
                service_id=step.service_id,
                op_name=step.op_name,
                args=actual_args,  # type: ignore[arg-type]
                expected_source=ExpectedSource.explicit(expected),
            )
            record = executor.execute_case(case, run_id)
            record.verdict = compare(record.expected, record.actual)
            result.records.append(record)
            if not record.verdict.successful or not isinstance(record.actual, TypedValue):
                result.successful = False
                return result
            expected_prev, actual_prev = expected, record.actual
        return result

    def _isolate(self, service_id: int, ops: Sequence[str], config: RunConfig, run_id: str) -> RunReport:
        cases = self.journal.cases_for(service_id)
        if not cases:
            descriptor = self.registry.lookup_service(service_id)
            for op in ops:
                cases.extend(generate_cases(descriptor, op, Boundary()))
            persist_cases(self.journal, cases)
        return self._run(cases, config, "isolation", run_id=run_id)

    def localize_fault(self, scenario: CompositeScenario, config: RunConfig | None = None) -> list[int]:
        """Return the ids of services whose isolated tests fail; [] if the composite passes.

        Raises :class:`Inconclusive` when the composite keeps failing for
        ``max_localization_iterations`` attempts while every service passes
        on its own, which points at the interfaces between services.
        """
        config = config or RunConfig()
        self._check_scenario(scenario)
        base = config.run_id or new_run_id()
        ops_by_service: dict[int, list[str]] = {}
        for step in scenario.steps:
            ops_by_service.setdefault(step.service_id, [])
            if step.op_name not in ops_by_service[step.service_id]:
                ops_by_service[step.service_id].append(step.op_name)
        for iteration in range(1, config.max_localization_iterations + 1):
            composite_cfg = RunConfig(**{**config.to_dict(), "run_id": f"{base}-composite{iteration}"})
            if self.run_composite(scenario, composite_cfg).successful:
                return []
            faulty = []
            for sid, ops in ops_by_service.items():
                report = self._isolate(sid, ops, config, run_id=f"{base}-iso{iteration}-ws{sid}")
                if not report.all_passed:
                    faulty.append(sid)
            if faulty:
                return faulty
            log.info("composite failed but all services pass in isolation (attempt %d)", iteration)
        raise Inconclusive(
            f"composite failed {config.max_localization_iterations} times while every service passed in isolation"
        )
