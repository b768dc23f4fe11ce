"""Test case generation.

Three strategies produce argument tuples for one operation:

``Boundary``  cross-product of per-parameter edge values, truncated to
              :data:`BOUNDARY_CAP` cases in lexicographic order.
``Random``    seeded draws from Python's Mersenne Twister (MT19937), whose
              output stream is fixed by the algorithm and therefore
              identical on every platform.
``Explicit``  exactly the caller's tuples.
"""

from __future__ import annotations

import itertools
import random
import string
import sys
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import TYPE_CHECKING, Any, Sequence, Union

from soatest.errors import ArgumentTypeError, ArityMismatch
from soatest.registry import OperationSignature, ServiceDescriptor
from soatest.values import INT_MAX, INT_MIN, TypedValue, ValueType, coerce

if TYPE_CHECKING:
    from soatest.store import Journal

BOUNDARY_CAP = 256
RANDOM_INT_RANGE = (-(10**6), 10**6)
RANDOM_FLOAT_RANGE = (-1e6, 1e6)
RANDOM_STRING_MAX = 16
_RANDOM_ALPHABET = string.ascii_letters + string.digits + " _-.<>&"
_LONG_STRING = "".join(itertools.islice(itertools.cycle(string.ascii_letters + string.digits), 256))


class CaseStatus(str, Enum):
    PENDING = "PENDING"
    SUCCESSFUL = "SUCCESSFUL"
    UNSUCCESSFUL = "UNSUCCESSFUL"


class ExpectedKind(str, Enum):
    ORACLE = "ORACLE"
    GOLDEN = "GOLDEN"
    EXPLICIT = "EXPLICIT"


@dataclass(frozen=True)
class ExpectedSource:
    kind: ExpectedKind
    value: TypedValue | None = None

    def __post_init__(self) -> None:
        if (self.kind is ExpectedKind.EXPLICIT) != (self.value is not None):
            raise ValueError("an EXPLICIT expected source carries exactly one value")

    @classmethod
    def oracle(cls) -> ExpectedSource:
        return cls(ExpectedKind.ORACLE)

    @classmethod
    def golden(cls) -> ExpectedSource:
        return cls(ExpectedKind.GOLDEN)

    @classmethod
    def explicit(cls, value: TypedValue) -> ExpectedSource:
        return cls(ExpectedKind.EXPLICIT, value)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value}
        if self.value is not None:
            d["value"] = self.value.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExpectedSource:
        value = TypedValue.from_dict(d["value"]) if "value" in d else None
        return cls(ExpectedKind(d["kind"]), value)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def new_case_id() -> str:
    return "c-" + uuid.uuid4().hex[:16]


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    case_id: str
    service_id: int
    op_name: str
    args: tuple[TypedValue, ...]
    expected_source: ExpectedSource = field(default_factory=ExpectedSource.oracle)
    status: CaseStatus = CaseStatus.PENDING
    created_at: str = field(default_factory=_now)

    def with_status(self, status: CaseStatus) -> TestCase:
        if status is CaseStatus.PENDING and self.status is not CaseStatus.PENDING:
            raise ValueError(f"case {self.case_id} cannot return to PENDING")
        return replace(self, status=status)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "service_id": self.service_id,
            "op_name": self.op_name,
            "args": [a.to_dict() for a in self.args],
            "expected": self.expected_source.to_dict(),
            "status": self.status.value,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TestCase:
        return cls(
            case_id=d["case_id"],
            service_id=d["service_id"],
            op_name=d["op_name"],
            args=tuple(TypedValue.from_dict(a) for a in d["args"]),
            expected_source=ExpectedSource.from_dict(d["expected"]),
            status=CaseStatus(d["status"]),
            created_at=d["created_at"],
        )


@dataclass(frozen=True)
class Boundary:
    pass


@dataclass(frozen=True)
class Random:
    seed: int
    count: int

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.count < 1:
            raise ValueError("RANDOM count must be >= 1")


@dataclass(frozen=True)
class Explicit:
    tuples: tuple[tuple[Any, ...], ...]

    def __init__(self, tuples: Sequence[Sequence[Any]]) -> None:
        object.__setattr__(self, "tuples", tuple(tuple(t) for t in tuples))


GenStrategy = Union[Boundary, Random, Explicit]


def boundary_values(t: ValueType) -> list[TypedValue]:
    if t is ValueType.INT:
        raw: list[Any] = [0, 1, -1, INT_MAX, INT_MIN]
    elif t is ValueType.FLOAT:
        raw = [0.0, 1.0, -1.0, sys.float_info.min, sys.float_info.max]
    elif t is ValueType.STRING:
        raw = ["", "a", _LONG_STRING]
    else:
        raw = [False, True]
    return [TypedValue(t, v) for v in raw]


def _random_value(rng: random.Random, t: ValueType) -> TypedValue:
    if t is ValueType.INT:
        return TypedValue.int(rng.randint(*RANDOM_INT_RANGE))
    if t is ValueType.FLOAT:
        return TypedValue.float(rng.uniform(*RANDOM_FLOAT_RANGE))
    if t is ValueType.STRING:
        n = rng.randint(0, RANDOM_STRING_MAX)
        return TypedValue.string("".join(rng.choice(_RANDOM_ALPHABET) for _ in range(n)))
    return TypedValue.bool(rng.getrandbits(1) == 1)


def typed_args(sig: OperationSignature, raw: Sequence[Any]) -> tuple[TypedValue, ...]:
    """Check *raw* against *sig* and convert each element to a TypedValue."""
    if len(raw) != len(sig.params):
        raise ArityMismatch(f"{sig.op_name} takes {len(sig.params)} arguments, got {len(raw)}")
    out = []
    for (name, t), value in zip(sig.params, raw):
        try:
            out.append(coerce(value, t))
        except ValueError as exc:
            raise ArgumentTypeError(f"{sig.op_name}.{name}: {exc}") from None
    return tuple(out)


def generate_cases(
    descriptor: ServiceDescriptor,
    op_name: str,
    strategy: GenStrategy,
    expected: ExpectedSource | None = None,
) -> list[TestCase]:
    sig = descriptor.operation(op_name)
    expected = expected or ExpectedSource.oracle()
    if expected.value is not None and expected.value.value_type is not sig.return_type:
        raise ArgumentTypeError(f"expected value must be {sig.return_type.value}")

    if isinstance(strategy, Boundary):
        per_param = [boundary_values(t) for t in sig.param_types]
        tuples = list(itertools.islice(itertools.product(*per_param), BOUNDARY_CAP))
    elif isinstance(strategy, Random):
        rng = random.Random(strategy.seed)
        tuples = [tuple(_random_value(rng, t) for t in sig.param_types) for _ in range(strategy.count)]
    elif isinstance(strategy, Explicit):
        tuples = [typed_args(sig, t) for t in strategy.tuples]
    else:
        raise TypeError(f"unknown strategy {strategy!r}")

    return [
        TestCase(
            case_id=new_case_id(),
            service_id=descriptor.service_id,
            op_name=op_name,
            args=tuple(args),
            expected_source=expected,
        )
        for args in tuples
    ]


def persist_cases(journal: Journal, cases: Sequence[TestCase]) -> int:
    for case in cases:
        journal.append("CASE", case.to_dict())
    return len(cases)
