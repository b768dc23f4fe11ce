from __future__ import annotations

import time
from pathlib import Path
from typing import Callable, Iterator

import pytest
from hypothesis import HealthCheck, settings

from soatest.adapters import LoopbackHub
from soatest.engine import Engine
from soatest.middleware import TestResponse, decode_request, encode_response
from soatest.mockfleet import FleetHandle, MockServiceSpec, start_fleet
from soatest.registry import OperationSignature, Protocol, ServerAddress, ServiceDescriptor
from soatest.store import Journal
from soatest.values import parse_value

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TESTS_DIR = Path(__file__).parent
GOLDEN_DIR = TESTS_DIR / "golden"
DATA_DIR = TESTS_DIR / "data"

ORACLE_FOR_OP = {
    "add": "int_add",
    "concat": "concat",
    "echo": "echo",
    "echo_int": "echo",
    "echo_float": "echo",
    "echo_bool": "echo",
}


@pytest.fixture
def journal_path(tmp_path: Path) -> Path:
    return tmp_path / "journal.jsonl"


@pytest.fixture
def journal(journal_path: Path) -> Iterator[Journal]:
    with Journal(journal_path) as j:
        yield j


@pytest.fixture
def hub() -> LoopbackHub:
    return LoopbackHub()


@pytest.fixture
def engine(journal: Journal, hub: LoopbackHub) -> Engine:
    return Engine(journal, hub=hub)


@pytest.fixture
def fleet(hub: LoopbackHub) -> Iterator[Callable[..., FleetHandle]]:
    """Factory starting mock fleets on the test's hub; all are stopped at teardown."""
    handles: list[FleetHandle] = []

    def start(*specs: MockServiceSpec) -> FleetHandle:
        handle = start_fleet(specs, hub=hub)
        handles.append(handle)
        return handle

    yield start
    for h in handles:
        h.stop()


@pytest.fixture
def deploy(engine: Engine, fleet) -> Callable[..., FleetHandle]:
    """Start mock services, register them and bind the matching builtin oracles."""

    def go(*specs: MockServiceSpec, oracles: bool = True) -> FleetHandle:
        handle = fleet(*specs)
        for d in handle.descriptors():
            engine.registry.register_service(d)
            if oracles:
                for op in d.operations:
                    engine.codegen.register_oracle(d.service_id, op.op_name, ORACLE_FOR_OP[op.op_name])
        return handle

    return go


@pytest.fixture
def custom_service(engine: Engine, hub: LoopbackHub):
    """Register a LOOPBACK service backed by a Python function of the typed args.

    ``fn(args) -> TypedValue`` may raise to answer with a fault.  ``replicas``
    endpoints share the handler; ``on_call(addr)`` observes each request.
    """
    bound: list[ServerAddress] = []

    def make(
        sid: int,
        sig: OperationSignature,
        fn: Callable,
        *,
        oracle=None,
        replicas: int = 1,
        latency: float = 0.0,
        on_call: Callable | None = None,
    ) -> ServiceDescriptor:
        addrs = tuple(ServerAddress("loopback", 1000 * sid + i, f"/custom{sid}") for i in range(replicas))

        def handler_for(addr: ServerAddress):
            def handle(body: bytes, timeout: float) -> bytes:
                if on_call:
                    on_call(addr)
                if latency:
                    time.sleep(latency)
                req = decode_request(body)
                args = [parse_value(t, vt) for t, vt in zip(req.parameters, sig.param_types)]
                try:
                    value = fn(args)
                except Exception as exc:  # noqa: BLE001 - becomes a fault reply
                    return encode_response(TestResponse.fault(sid, str(exc)))
                return encode_response(TestResponse.ok(sid, value.text()))

            return handle

        for a in addrs:
            hub.register(a, handler_for(a))
            bound.append(a)
        desc = ServiceDescriptor(sid, f"custom{sid}", Protocol.LOOPBACK, addrs, (sig,))
        engine.registry.register_service(desc)
        if oracle is not None:
            engine.codegen.register_oracle(sid, sig.op_name, oracle)
        return desc

    yield make
    for a in bound:
        hub.unregister(a)
