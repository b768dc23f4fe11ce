"""Verdicts: comparing expected with actual results and recording the outcome."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

from soatest.errors import UnknownRun
from soatest.store import Journal, ResultRecord
from soatest.values import TypedValue, ValueType

FLOAT_REL_TOL = 1e-9


class Reason(str, Enum):
    MISMATCH = "MISMATCH"
    TRANSPORT_ERROR = "TRANSPORT_ERROR"
    FAULT_RESPONSE = "FAULT_RESPONSE"
    ORACLE_FAILURE = "ORACLE_FAILURE"
    MALFORMED = "MALFORMED"


@dataclass(frozen=True)
class Failure:
    """An error-class result standing in for a value."""

    reason: Reason
    detail: str = ""


Outcome = Union[TypedValue, Failure, None]


@dataclass(frozen=True)
class Verdict:
    successful: bool
    reason: Reason | None = None

    def __post_init__(self) -> None:
        if self.successful != (self.reason is None):
            raise ValueError("a verdict is SUCCESSFUL exactly when it has no reason")

    @classmethod
    def passed(cls) -> Verdict:
        return cls(True)

    @classmethod
    def failed(cls, reason: Reason) -> Verdict:
        return cls(False, reason)

    def __str__(self) -> str:
        return "SUCCESSFUL" if self.successful else f"UNSUCCESSFUL({self.reason.value})"  # type: ignore[union-attr]


def values_equal(a: TypedValue, b: TypedValue) -> bool:
    if a.value_type is not b.value_type:
        return False
    if a.value_type is ValueType.FLOAT:
        x, y = float(a.payload), float(b.payload)
        return x == y or math.isclose(x, y, rel_tol=FLOAT_REL_TOL, abs_tol=0.0)
    return a.payload == b.payload and type(a.payload) is type(b.payload)


def compare(expected: Outcome, actual: Outcome) -> Verdict:
    if isinstance(actual, Failure):
        return Verdict.failed(actual.reason)
    if isinstance(expected, Failure):
        return Verdict.failed(expected.reason)
    if expected is None or actual is None:
        return Verdict.failed(Reason.ORACLE_FAILURE if expected is None else Reason.MALFORMED)
    return Verdict.passed() if values_equal(expected, actual) else Verdict.failed(Reason.MISMATCH)


@dataclass
class ServiceCounts:
    successful: int = 0
    unsuccessful: int = 0


@dataclass
class RunReport:
    run_id: str
    per_service: dict[int, ServiceCounts] = field(default_factory=dict)
    failures: list[tuple[str, str]] = field(default_factory=list)
    duration_s: float | None = None
    executed: list[str] = field(default_factory=list)

    @property
    def successful(self) -> int:
        return sum(c.successful for c in self.per_service.values())

    @property
    def unsuccessful(self) -> int:
        return sum(c.unsuccessful for c in self.per_service.values())

    @property
    def total(self) -> int:
        return self.successful + self.unsuccessful

    @property
    def all_passed(self) -> bool:
        return self.unsuccessful == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "successful": self.successful,
            "unsuccessful": self.unsuccessful,
            "services": {
                str(sid): {"successful": c.successful, "unsuccessful": c.unsuccessful}
                for sid, c in sorted(self.per_service.items())
            },
            "failures": [{"case_id": cid, "reason": reason} for cid, reason in self.failures],
            "duration_s": self.duration_s,
            "executed": list(self.executed),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunReport:
        return cls(
            run_id=d["run_id"],
            per_service={int(k): ServiceCounts(**v) for k, v in d["services"].items()},
            failures=[(f["case_id"], f["reason"]) for f in d["failures"]],
            duration_s=d.get("duration_s"),
            executed=list(d.get("executed", [])),
        )

    def render_table(self) -> str:
        lines = [f"run {self.run_id}", f"{'service':>8}  {'successful':>10}  {'unsuccessful':>12}"]
        for sid, c in sorted(self.per_service.items()):
            lines.append(f"{sid:>8}  {c.successful:>10}  {c.unsuccessful:>12}")
        lines.append(f"{'total':>8}  {self.successful:>10}  {self.unsuccessful:>12}")
        if self.failures:
            lines.append("failures:")
            lines.extend(f"  {cid}  {reason}" for cid, reason in self.failures)
        if self.duration_s is not None:
            lines.append(f"duration: {self.duration_s:.3f}s")
        return "\n".join(lines)


def _value(outcome: Outcome) -> TypedValue | None:
    return outcome if isinstance(outcome, TypedValue) else None


def _detail(expected: Outcome, actual: Outcome) -> str:
    for o in (actual, expected):
        if isinstance(o, Failure) and o.detail:
            return o.detail
    return ""


class Monitor:
    def __init__(self, journal: Journal) -> None:
        self.journal = journal

    def mark_result(
        self,
        case_id: str,
        run_id: str,
        verdict: Verdict,
        *,
        expected: Outcome = None,
        actual: Outcome = None,
        latency_s: float = 0.0,
        agent_id: int | None = None,
        server: str | None = None,
    ) -> None:
        case = self.journal.case(case_id)
        record = ResultRecord(
            case_id=case_id,
            run_id=run_id,
            service_id=case.service_id,
            successful=verdict.successful,
            reason=verdict.reason.value if verdict.reason else None,
            expected=_value(expected),
            actual=_value(actual),
            detail=_detail(expected, actual),
            latency_s=latency_s,
            agent_id=agent_id,
            server=server,
        )
        self.journal.append("RESULT", record.to_dict())

    def summarize(self, run_id: str) -> RunReport:
        results = self.journal.results_for_run(run_id)
        run = self.journal.state.runs.get(run_id)
        if run is None and not results:
            raise UnknownRun(f"unknown run {run_id}")
        report = RunReport(run_id, duration_s=run.duration_s if run else None)
        for r in results:
            counts = report.per_service.setdefault(r.service_id, ServiceCounts())
            if r.successful:
                counts.successful += 1
            else:
                counts.unsuccessful += 1
                report.failures.append((r.case_id, r.reason or ""))
            report.executed.append(r.case_id)
        return report
