"""Client plans and the local oracles that compute expected results.

A :class:`ClientPlan` binds one (service, operation) pair to an optional
oracle: a pure function from the argument list to the expected
:class:`~soatest.values.TypedValue`.  Plans are persisted as PLAN records
carrying an *oracle reference* so a later process can rebind them.  A
reference is either the name of a bundled oracle (see
:data:`BUILTIN_ORACLES`) or an import path ``package.module:function``.
"""

from __future__ import annotations

import importlib
import logging
import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

from soatest.errors import ArgumentTypeError, OracleAbsent, OracleFailure
from soatest.registry import OperationSignature, Registry
from soatest.store import Journal, PlanRecord
from soatest.values import INT_MAX, INT_MIN, TypedValue

log = logging.getLogger(__name__)

Oracle = Callable[[Sequence[TypedValue]], TypedValue]


def int_add(args: Sequence[TypedValue]) -> TypedValue:
    """64-bit two's-complement addition (wraps like a ``long`` service)."""
    total = sum(a.payload for a in args)  # type: ignore[misc]
    wrapped = (total - INT_MIN) % 2**64 + INT_MIN
    assert INT_MIN <= wrapped <= INT_MAX
    return TypedValue.int(wrapped)


def concat(args: Sequence[TypedValue]) -> TypedValue:
    return TypedValue.string("".join(a.text() for a in args))


def echo(args: Sequence[TypedValue]) -> TypedValue:
    (value,) = args
    return value


BUILTIN_ORACLES: dict[str, Oracle] = {
    "int_add": int_add,
    "concat": concat,
    "echo": echo,
}


def resolve_oracle(ref: str) -> Oracle:
    if ref in BUILTIN_ORACLES:
        return BUILTIN_ORACLES[ref]
    module_name, sep, attr = ref.partition(":")
    if not sep:
        raise LookupError(f"unknown oracle {ref!r}")
    obj = importlib.import_module(module_name)
    for part in attr.split("."):
        obj = getattr(obj, part)
    if not callable(obj):
        raise LookupError(f"oracle {ref!r} is not callable")
    return obj  # type: ignore[return-value]


def oracle_ref(fn: Oracle) -> str | None:
    """Name under which *fn* can be re-resolved later, or None."""
    for name, builtin in BUILTIN_ORACLES.items():
        if fn is builtin:
            return name
    module = getattr(fn, "__module__", None)
    qualname = getattr(fn, "__qualname__", "")
    if not module or "<" in qualname:
        return None
    ref = f"{module}:{qualname}"
    try:
        return ref if resolve_oracle(ref) is fn else None
    except (ImportError, AttributeError, LookupError):
        return None


@dataclass(frozen=True)
class ClientPlan:
    plan_id: str
    service_id: int
    op_name: str
    signature: OperationSignature
    oracle: Oracle | None = field(default=None, compare=False)
    oracle_ref: str | None = None

    @property
    def has_oracle(self) -> bool:
        return self.oracle is not None


def evaluate_oracle(plan: ClientPlan, args: Sequence[TypedValue]) -> TypedValue:
    if plan.oracle is None:
        raise OracleAbsent(f"no oracle for service {plan.service_id} operation {plan.op_name}")
    sig = plan.signature
    if len(args) != len(sig.params) or any(a.value_type is not t for a, t in zip(args, sig.param_types)):
        raise ArgumentTypeError(f"arguments do not match {sig.op_name}{sig.param_types}")
    try:
        result = plan.oracle(list(args))
    except Exception as exc:
        raise OracleFailure(f"oracle for {sig.op_name} raised {type(exc).__name__}: {exc}") from exc
    if not isinstance(result, TypedValue) or result.value_type is not sig.return_type:
        raise OracleFailure(f"oracle for {sig.op_name} returned {result!r}, expected {sig.return_type.value}")
    return result


class CodeGen:
    """Oracle catalog plus plan construction for a registry."""

    def __init__(self, registry: Registry, journal: Journal) -> None:
        self.registry = registry
        self.journal = journal
        self.catalog: dict[tuple[int, str], Oracle] = {}
        self._plans: dict[tuple[int, str], ClientPlan] = {}
        self._lock = threading.RLock()

    def register_oracle(self, service_id: int, op_name: str, oracle: Union[Oracle, str]) -> ClientPlan:
        """Bind *oracle* and persist a fresh plan so the binding survives a reopen."""
        self.registry.signature(service_id, op_name)
        fn = resolve_oracle(oracle) if isinstance(oracle, str) else oracle
        with self._lock:
            self.catalog[(service_id, op_name)] = fn
            return self.build_client_plan(service_id, op_name)

    def build_client_plan(self, service_id: int, op_name: str) -> ClientPlan:
        sig = self.registry.signature(service_id, op_name)
        with self._lock:
            fn = self.catalog.get((service_id, op_name))
            ref = oracle_ref(fn) if fn is not None else None
            plan = ClientPlan(
                plan_id=f"plan-{service_id}-{op_name}-{uuid.uuid4().hex[:8]}",
                service_id=service_id,
                op_name=op_name,
                signature=sig,
                oracle=fn,
                oracle_ref=ref,
            )
            self.journal.append("PLAN", PlanRecord(plan.plan_id, service_id, op_name, ref).to_dict())
            self._plans[(service_id, op_name)] = plan
            return plan

    def plan_for(self, service_id: int, op_name: str) -> ClientPlan:
        """Current plan for the key, rebinding a persisted one or building afresh."""
        key = (service_id, op_name)
        with self._lock:
            if key in self._plans:
                return self._plans[key]
            record = self.journal.state.plans.get(key)
            if record is not None and key not in self.catalog:
                if record.oracle_ref:
                    try:
                        self.catalog[key] = resolve_oracle(record.oracle_ref)
                    except (ImportError, AttributeError, LookupError) as exc:
                        log.warning("cannot rebind oracle %s for %s: %s", record.oracle_ref, key, exc)
                plan = ClientPlan(
                    plan_id=record.plan_id,
                    service_id=service_id,
                    op_name=op_name,
                    signature=self.registry.signature(service_id, op_name),
                    oracle=self.catalog.get(key),
                    oracle_ref=record.oracle_ref,
                )
                self._plans[key] = plan
                return plan
            return self.build_client_plan(service_id, op_name)

