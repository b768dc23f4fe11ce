"""Append-only journal holding every artefact of a test campaign.

File format: UTF-8, one JSON object per line, keys in this order::

    {"seq": 1, "type": "SERVICE", "written_at": "<ISO-8601 UTC>", "payload": {...}}

``seq`` starts at 1 and increases by one per record.  Record types and the
payload each one carries:

========  ===============================================================
SERVICE   a service descriptor (later records for the same id replace it)
PLAN      client plan metadata: plan_id, service_id, op_name, oracle_ref
CASE      a test case (later records for the same case_id replace it)
RESULT    one verdict for one case in one run; updates the case status
RUN       run lifecycle: ``phase`` "start" (with config) or "end"
BASELINE  recorded golden value for a case without an oracle
========  ===============================================================

The in-memory state is the left fold of the records in sequence order.
Loading stops at the first unreadable line and emits a
:class:`~soatest.errors.CorruptJournal` warning; unknown record types are
skipped with a plain warning so newer journals stay loadable.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

from soatest.errors import CorruptJournal, StoreUnavailable, UnknownCase
from soatest.registry import ServiceDescriptor
from soatest.testgen import CaseStatus, TestCase
from soatest.values import TypedValue

log = logging.getLogger(__name__)

RECORD_TYPES = ("SERVICE", "CASE", "PLAN", "RESULT", "RUN", "BASELINE")


@dataclass(frozen=True)
class PlanRecord:
    plan_id: str
    service_id: int
    op_name: str
    oracle_ref: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"plan_id": self.plan_id, "service_id": self.service_id, "op_name": self.op_name, "oracle_ref": self.oracle_ref}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PlanRecord:
        return cls(d["plan_id"], d["service_id"], d["op_name"], d.get("oracle_ref"))


@dataclass(frozen=True)
class ResultRecord:
    case_id: str
    run_id: str
    service_id: int
    successful: bool
    reason: str | None = None
    expected: TypedValue | None = None
    actual: TypedValue | None = None
    detail: str = ""
    latency_s: float = 0.0
    agent_id: int | None = None
    server: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "run_id": self.run_id,
            "service_id": self.service_id,
            "successful": self.successful,
            "reason": self.reason,
            "expected": self.expected.to_dict() if self.expected else None,
            "actual": self.actual.to_dict() if self.actual else None,
            "detail": self.detail,
            "latency_s": self.latency_s,
            "agent_id": self.agent_id,
            "server": self.server,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ResultRecord:
        return cls(
            case_id=d["case_id"],
            run_id=d["run_id"],
            service_id=d["service_id"],
            successful=d["successful"],
            reason=d.get("reason"),
            expected=TypedValue.from_dict(d["expected"]) if d.get("expected") else None,
            actual=TypedValue.from_dict(d["actual"]) if d.get("actual") else None,
            detail=d.get("detail", ""),
            latency_s=d.get("latency_s", 0.0),
            agent_id=d.get("agent_id"),
            server=d.get("server"),
        )

    @property
    def status(self) -> CaseStatus:
        return CaseStatus.SUCCESSFUL if self.successful else CaseStatus.UNSUCCESSFUL


@dataclass
class RunInfo:
    run_id: str
    kind: str = "full"
    config: dict[str, Any] = field(default_factory=dict)
    started_at: str | None = None
    finished_at: str | None = None
    duration_s: float | None = None


@dataclass
class State:
    services: dict[int, ServiceDescriptor] = field(default_factory=dict)
    cases: dict[str, TestCase] = field(default_factory=dict)
    plans: dict[tuple[int, str], PlanRecord] = field(default_factory=dict)
    results: list[ResultRecord] = field(default_factory=list)
    runs: dict[str, RunInfo] = field(default_factory=dict)
    baselines: dict[str, TypedValue] = field(default_factory=dict)
    last_seq: int = 0

    def apply(self, seq: int, record_type: str, payload: dict[str, Any]) -> None:
        self.prepare(record_type, payload)()
        self.last_seq = seq

    def prepare(self, record_type: str, payload: dict[str, Any]) -> Callable[[], None]:
        """Decode and validate *payload*; return the mutation that folds it in."""
        if record_type == "SERVICE":
            d = ServiceDescriptor.from_dict(payload)
            return lambda: self.services.__setitem__(d.service_id, d)
        if record_type == "CASE":
            case = TestCase.from_dict(payload)
            return lambda: self.cases.__setitem__(case.case_id, case)
        if record_type == "PLAN":
            plan = PlanRecord.from_dict(payload)
            return lambda: self.plans.__setitem__((plan.service_id, plan.op_name), plan)
        if record_type == "RESULT":
            result = ResultRecord.from_dict(payload)
            case = self.cases.get(result.case_id)
            if case is None:
                raise ValueError(f"RESULT for unknown case {result.case_id}")
            updated = case.with_status(result.status)

            def fold_result() -> None:
                self.cases[result.case_id] = updated
                self.results.append(result)

            return fold_result
        if record_type == "RUN":
            run_id, phase = payload["run_id"], payload["phase"]
            if phase not in ("start", "end"):
                raise ValueError(f"unknown RUN phase {phase!r}")

            def fold_run() -> None:
                run = self.runs.setdefault(run_id, RunInfo(run_id))
                if phase == "start":
                    run.kind = payload.get("kind", "full")
                    run.config = payload.get("config", {})
                    run.started_at = payload.get("at")
                else:
                    run.finished_at = payload.get("at")
                    run.duration_s = payload.get("duration_s")

            return fold_run
        if record_type == "BASELINE":
            case_id, value = payload["case_id"], TypedValue.from_dict(payload["value"])
            return lambda: self.baselines.__setitem__(case_id, value)
        raise ValueError(f"unknown record type {record_type!r}")


def _parse_line(line: str, prev_seq: int) -> tuple[int, str, dict[str, Any]]:
    rec = json.loads(line)
    seq = rec["seq"]
    if not isinstance(seq, int) or seq <= prev_seq:
        raise ValueError(f"sequence {seq!r} not greater than {prev_seq}")
    record_type = rec["type"]
    payload = rec["payload"]
    if not isinstance(payload, dict):
        raise ValueError("payload is not an object")
    return seq, record_type, payload


def _replay(data: bytes) -> tuple[State, int]:
    """Fold *data*; returns the state and the byte length of the valid prefix."""
    state = State()
    offset = 0
    line_no = 0
    while offset < len(data):
        nl = data.find(b"\n", offset)
        end = len(data) if nl < 0 else nl + 1
        raw = data[offset:end]
        line_no += 1
        if raw.strip():
            try:
                seq, record_type, payload = _parse_line(raw.decode("utf-8"), state.last_seq)
                if record_type not in RECORD_TYPES:
                    warnings.warn(f"journal line {line_no}: skipping unknown record type {record_type!r}", stacklevel=3)
                    state.last_seq = seq
                else:
                    state.apply(seq, record_type, payload)
            except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
                warnings.warn(
                    CorruptJournal(
                        f"journal line {line_no} unreadable ({exc}); loaded valid prefix up to seq {state.last_seq}",
                        last_valid_seq=state.last_seq,
                        line_no=line_no,
                    ),
                    stacklevel=3,
                )
                return state, offset
        offset = end
    return state, offset


def load_all(path: str | Path) -> State:
    """Rebuild state from the journal at *path*; a missing or empty file is empty state."""
    p = Path(path)
    if not p.exists():
        return State()
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise StoreUnavailable(f"cannot read journal {p}: {exc}") from exc
    return _replay(data)[0]


def successful_cases(state: State, service_id: int) -> list[TestCase]:
    return [c for c in state.cases.values() if c.service_id == service_id and c.status is CaseStatus.SUCCESSFUL]


class Journal:
    """Single-writer handle on a journal file.

    Opening replays the file.  If the tail is corrupt the file is cut back
    to its valid prefix so that new records land on a clean line.
    """

    def __init__(self, path: str | Path, *, durable: bool = True) -> None:
        self.path = Path(path)
        self.durable = durable
        self.write_lock = threading.RLock()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            data = self.path.read_bytes() if self.path.exists() else b""
            self.state, valid = _replay(data)
            if valid < len(data):
                log.warning("truncating corrupt journal tail of %s at byte %d", self.path, valid)
                with open(self.path, "r+b") as fh:
                    fh.truncate(valid)
            elif data and not data.endswith(b"\n"):
                with open(self.path, "ab") as fh:
                    fh.write(b"\n")
            self._fh = open(self.path, "ab")
        except OSError as exc:
            raise StoreUnavailable(f"cannot open journal {self.path}: {exc}") from exc

    def append(self, record_type: str, payload: dict[str, Any]) -> int:
        if record_type not in RECORD_TYPES:
            raise ValueError(f"unknown record type {record_type!r}")
        with self.write_lock:
            if self._fh is None:
                raise StoreUnavailable(f"journal {self.path} is closed")
            seq = self.state.last_seq + 1
            line = json.dumps(
                {
                    "seq": seq,
                    "type": record_type,
                    "written_at": datetime.now(timezone.utc).isoformat(timespec="microseconds"),
                    "payload": payload,
                },
                ensure_ascii=False,
                separators=(",", ":"),
            )
            # validate before writing: a payload that cannot be folded must never reach disk
            try:
                change = self.state.prepare(record_type, payload)
            except (KeyError, TypeError) as exc:
                raise ValueError(f"invalid {record_type} payload: {exc}") from exc
            try:
                self._fh.write(line.encode("utf-8") + b"\n")
                self._fh.flush()
                if self.durable:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StoreUnavailable(f"append to {self.path} failed: {exc}") from exc
            change()
            self.state.last_seq = seq
            return seq

    def append_many(self, records: Iterable[tuple[str, dict[str, Any]]]) -> list[int]:
        with self.write_lock:
            return [self.append(t, p) for t, p in records]

    def close(self) -> None:
        with self.write_lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> Journal:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    # read side

    def snapshot(self) -> State:
        with self.write_lock:
            s = self.state
            return State(
                services=dict(s.services),
                cases=dict(s.cases),
                plans=dict(s.plans),
                results=list(s.results),
                runs={k: RunInfo(**v.__dict__) for k, v in s.runs.items()},
                baselines=dict(s.baselines),
                last_seq=s.last_seq,
            )

    def case(self, case_id: str) -> TestCase:
        try:
            return self.state.cases[case_id]
        except KeyError:
            raise UnknownCase(f"unknown case {case_id}") from None

    def cases_for(self, service_id: int) -> list[TestCase]:
        with self.write_lock:
            return [c for c in self.state.cases.values() if c.service_id == service_id]

    def successful_cases_for(self, service_id: int) -> list[TestCase]:
        with self.write_lock:
            return successful_cases(self.state, service_id)

    def results_for_run(self, run_id: str) -> list[ResultRecord]:
        with self.write_lock:
            return [r for r in self.state.results if r.run_id == run_id]

    def baseline(self, case_id: str) -> TypedValue | None:
        return self.state.baselines.get(case_id)
