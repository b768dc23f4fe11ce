"""Locally hosted services under test, with fault injection.

SOAP and REST mocks are real HTTP servers (one per replica, each on its
own port); LOOPBACK mocks are handlers in a
:class:`~soatest.adapters.LoopbackHub`.  The service side is written
independently of the client-side middleware: it parses requests and
builds responses itself, so conversions are checked end to end.

Fleet configuration is JSON::

    {"services": [
        {"service_id": 5, "protocol": "SOAP", "operations": ["add"],
         "port": 0, "replicas": 1, "latency_ms": 0, "fault": "NONE"}
    ]}

Optional per-service keys: ``host``, ``path``, ``name``,
``soap_namespace``, ``delay_ms`` (used by the DELAY fault).
"""

from __future__ import annotations

import itertools
import json
import logging
import socketserver
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence
from xml.sax.saxutils import escape

from soatest.adapters import DEFAULT_HUB, LoopbackHub
from soatest.errors import BindFailure, HarnessError, UnknownService
from soatest.middleware import TestResponse, decode_request, encode_response
from soatest.registry import OperationSignature, Protocol, ServerAddress, ServiceDescriptor
from soatest.values import INT_MAX, INT_MIN, TypedValue, ValueType, format_value, parse_value

log = logging.getLogger(__name__)

_SOAP_ENV = "http://www.w3.org/2001/12/soap-envelope"
_SOAP_ENC = "http://www.w3.org/2001/12/soap-encoding"
_XML_ESCAPES = {"\r": "&#13;"}


class FaultMode(str, Enum):
    NONE = "NONE"
    OFF_BY_ONE = "OFF_BY_ONE"
    SOAP_FAULT = "SOAP_FAULT"
    DELAY = "DELAY"
    DROP_CONNECTION = "DROP_CONNECTION"
    MALFORMED_BODY = "MALFORMED_BODY"


def _wrap64(n: int) -> int:
    return (n + 2**63) % 2**64 - 2**63


def _sig(name: str, params: Sequence[tuple[str, ValueType]], ret: ValueType) -> OperationSignature:
    return OperationSignature(name, tuple(params), ret)


I, F, S, B = ValueType.INT, ValueType.FLOAT, ValueType.STRING, ValueType.BOOL

# op name -> (signature, reference behaviour on raw payloads)
MOCK_OPERATIONS: dict[str, tuple[OperationSignature, Callable[..., Any]]] = {
    "add": (_sig("add", [("x", I), ("y", I)], I), lambda x, y: _wrap64(x + y)),
    "concat": (_sig("concat", [("a", S), ("b", S)], S), lambda a, b: a + b),
    "echo": (_sig("echo", [("value", S)], S), lambda v: v),
    "echo_int": (_sig("echo_int", [("value", I)], I), lambda v: v),
    "echo_float": (_sig("echo_float", [("value", F)], F), lambda v: v),
    "echo_bool": (_sig("echo_bool", [("value", B)], B), lambda v: v),
}


def _off_by_one(v: TypedValue) -> TypedValue:
    if v.value_type is ValueType.INT:
        return TypedValue.int(_wrap64(v.payload + 1))  # type: ignore[operator]
    if v.value_type is ValueType.FLOAT:
        return TypedValue.float(v.payload + 1.0)  # type: ignore[operator]
    if v.value_type is ValueType.STRING:
        return TypedValue.string(v.payload + "1")  # type: ignore[operator]
    return TypedValue.bool(not v.payload)


@dataclass
class MockServiceSpec:
    service_id: int
    protocol: Protocol
    operations: tuple[str, ...] = ("add",)
    fault_mode: FaultMode = FaultMode.NONE
    delay_ms: int = 0
    latency_ms: float = 0.0
    host: str = "127.0.0.1"
    port: int = 0
    replicas: int = 1
    path: str = ""
    name: str = ""
    soap_namespace: str = ""

    def __post_init__(self) -> None:
        self.protocol = Protocol(self.protocol)
        self.fault_mode = FaultMode(self.fault_mode)
        self.operations = tuple(self.operations)
        unknown = [op for op in self.operations if op not in MOCK_OPERATIONS]
        if unknown:
            raise ValueError(f"unknown mock operations {unknown}; choose from {sorted(MOCK_OPERATIONS)}")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        self.path = self.path or f"/ws{self.service_id}"
        self.name = self.name or f"mock-ws{self.service_id}"
        if self.protocol is Protocol.SOAP and not self.soap_namespace:
            self.soap_namespace = f"urn:soatest:ws{self.service_id}"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MockServiceSpec:
        d = dict(d)
        if "fault" in d:
            d["fault_mode"] = d.pop("fault")
        return cls(**d)

    def signatures(self) -> tuple[OperationSignature, ...]:
        return tuple(MOCK_OPERATIONS[op][0] for op in self.operations)


def load_fleet_config(path: str | Path) -> list[MockServiceSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = doc["services"] if isinstance(doc, dict) else doc
    return [MockServiceSpec.from_dict(e) for e in entries]


class _CallError(Exception):
    """Bad request from the client's point of view (answered with a fault)."""


class MockService:
    def __init__(self, spec: MockServiceSpec, stopping: threading.Event) -> None:
        self.spec = spec
        self._lock = threading.Lock()
        self._fault = spec.fault_mode
        self._delay_ms = spec.delay_ms
        self._stopping = stopping
        self.requests = 0

    def set_fault(self, mode: FaultMode, delay_ms: int | None = None) -> None:
        with self._lock:
            self._fault = FaultMode(mode)
            if delay_ms is not None:
                self._delay_ms = delay_ms

    def fault(self) -> tuple[FaultMode, int]:
        with self._lock:
            self.requests += 1
            return self._fault, self._delay_ms

    def wait(self, seconds: float) -> None:
        if seconds > 0:
            self._stopping.wait(seconds)

    def call(self, op_name: str, args_text: Sequence[str], mode: FaultMode) -> TypedValue:
        if op_name not in self.spec.operations:
            raise _CallError(f"unknown operation {op_name!r}")
        sig, behaviour = MOCK_OPERATIONS[op_name]
        if len(args_text) != len(sig.params):
            raise _CallError(f"{op_name} takes {len(sig.params)} arguments, got {len(args_text)}")
        try:
            args = [parse_value(t, vt).payload for t, vt in zip(args_text, sig.param_types)]
        except ValueError as exc:
            raise _CallError(str(exc)) from None
        result = TypedValue(sig.return_type, behaviour(*args))
        return _off_by_one(result) if mode is FaultMode.OFF_BY_ONE else result


# SOAP service side


def _soap_doc(inner: str) -> bytes:
    return (
        '<?xml version="1.0"?>\n'
        f'<soap:Envelope xmlns:soap="{_SOAP_ENV}" soap:encodingStyle="{_SOAP_ENC}">'
        f"<soap:Body>{inner}</soap:Body></soap:Envelope>\n"
    ).encode("utf-8")


def soap_result(op_name: str, namespace: str, value: TypedValue) -> bytes:
    text = escape(format_value(value), _XML_ESCAPES)
    ns = escape(namespace, {'"': "&quot;"})
    return _soap_doc(f'<m:{op_name}Response xmlns:m="{ns}"><m:result>{text}</m:result></m:{op_name}Response>')


def soap_fault(code: str, text: str) -> bytes:
    return _soap_doc(
        f"<soap:Fault><faultcode>soap:{code}</faultcode>"
        f"<faultstring>{escape(text, _XML_ESCAPES)}</faultstring></soap:Fault>"
    )


def parse_soap_call(body: bytes, spec: MockServiceSpec) -> tuple[str, list[str]]:
    try:
        root = ET.fromstring(body)
    except ET.ParseError as exc:
        raise _CallError(f"request is not XML: {exc}") from None
    if root.tag != f"{{{_SOAP_ENV}}}Envelope":
        raise _CallError("missing SOAP envelope")
    env_body = root.find(f"{{{_SOAP_ENV}}}Body")
    if env_body is None or not len(env_body):
        raise _CallError("empty SOAP body")
    call = env_body[0]
    ns, _, op_name = call.tag[1:].partition("}") if call.tag.startswith("{") else ("", "", call.tag)
    if ns != spec.soap_namespace:
        raise _CallError(f"operation namespace {ns!r} is not {spec.soap_namespace!r}")
    if op_name not in MOCK_OPERATIONS:
        raise _CallError(f"unknown operation {op_name!r}")
    sig = MOCK_OPERATIONS[op_name][0]
    given = {child.tag.rpartition("}")[2]: child.text or "" for child in call}
    missing = [n for n in sig.param_names if n not in given]
    if missing:
        raise _CallError(f"missing parameters {missing}")
    return op_name, [given[n] for n in sig.param_names]


# HTTP plumbing


class _MockHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    block_on_close = False
    request_queue_size = 128

    def __init__(self, address: tuple[str, int], service: MockService) -> None:
        self.service = service
        super().__init__(address, _MockHandler)

    def server_bind(self) -> None:
        # skip HTTPServer's reverse DNS lookup
        socketserver.TCPServer.server_bind(self)
        host, port = self.server_address[:2]
        self.server_name, self.server_port = str(host), int(port)


class _MockHandler(BaseHTTPRequestHandler):
    server: _MockHTTPServer
    protocol_version = "HTTP/1.0"

    def log_message(self, format: str, *args: Any) -> None:
        log.debug("mock %s: " + format, self.server.service.spec.service_id, *args)

    def _reply(self, status: int, content_type: str, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:  # noqa: N802
        svc = self.server.service
        spec = svc.spec
        body = self.rfile.read(int(self.headers.get("Content-Length") or 0))
        mode, delay_ms = svc.fault()
        svc.wait(spec.latency_ms / 1000.0)
        if mode is FaultMode.DELAY:
            svc.wait(delay_ms / 1000.0)
        if mode is FaultMode.DROP_CONNECTION:
            self.close_connection = True
            return
        if spec.protocol is Protocol.SOAP:
            self._soap(svc, body, mode)
        else:
            self._rest(svc, body, mode)

    def _soap(self, svc: MockService, body: bytes, mode: FaultMode) -> None:
        spec = svc.spec
        if self.path != spec.path:
            self._reply(404, "text/xml", soap_fault("Client", f"no service at {self.path}"))
            return
        if mode is FaultMode.MALFORMED_BODY:
            self._reply(200, "text/xml", b"<soap:Envelope><soap:Body><m:resu")
            return
        if mode is FaultMode.SOAP_FAULT:
            self._reply(500, "text/xml", soap_fault("Server", "injected fault"))
            return
        try:
            op_name, args = parse_soap_call(body, spec)
            result = svc.call(op_name, args, mode)
        except _CallError as exc:
            self._reply(500, "text/xml", soap_fault("Client", str(exc)))
            return
        self._reply(200, "text/xml", soap_result(op_name, spec.soap_namespace, result))

    def _rest(self, svc: MockService, body: bytes, mode: FaultMode) -> None:
        spec = svc.spec
        prefix = spec.path.rstrip("/") + "/"
        if not self.path.startswith(prefix):
            self._reply(404, "application/json", json.dumps({"error": f"no service at {self.path}"}).encode())
            return
        op_name = self.path[len(prefix):]
        if mode is FaultMode.MALFORMED_BODY:
            self._reply(200, "application/json", b'{"result": ')
            return
        if mode is FaultMode.SOAP_FAULT:
            self._reply(500, "application/json", b'{"error":"injected fault"}')
            return
        try:
            doc = json.loads(body.decode("utf-8"))
            if op_name not in MOCK_OPERATIONS or not isinstance(doc, dict):
                raise _CallError(f"unknown operation {op_name!r}")
            sig = MOCK_OPERATIONS[op_name][0]
            missing = [n for n in sig.param_names if n not in doc]
            if missing:
                raise _CallError(f"missing parameters {missing}")
            result = svc.call(op_name, [str(doc[n]) for n in sig.param_names], mode)
        except (_CallError, ValueError, UnicodeError) as exc:
            self._reply(400, "application/json", json.dumps({"error": str(exc)}).encode())
            return
        self._reply(200, "application/json", json.dumps({"result": format_value(result)}).encode())


# loopback service side


def _loopback_handler(svc: MockService) -> Callable[[bytes, float], bytes]:
    def handle(body: bytes, timeout: float) -> bytes:
        spec = svc.spec
        mode, delay_ms = svc.fault()
        wait = spec.latency_ms / 1000.0 + (delay_ms / 1000.0 if mode is FaultMode.DELAY else 0.0)
        if wait > timeout:
            svc.wait(timeout)
            raise TimeoutError(f"loopback ws{spec.service_id} exceeded {timeout:g}s")
        svc.wait(wait)
        if mode is FaultMode.DROP_CONNECTION:
            raise ConnectionResetError("connection dropped by mock")
        if mode is FaultMode.MALFORMED_BODY:
            return b"<response><WS-ID>"
        if mode is FaultMode.SOAP_FAULT:
            return encode_response(TestResponse.fault(spec.service_id, "injected fault"))
        try:
            req = decode_request(body)
            result = svc.call(req.function_to_call, req.parameters, mode)
        except (_CallError, HarnessError) as exc:
            return encode_response(TestResponse.fault(spec.service_id, str(exc)))
        return encode_response(TestResponse.ok(spec.service_id, format_value(result)))

    return handle


_loopback_ports = itertools.count(1)
_loopback_lock = threading.Lock()


def _next_loopback_port(hub: LoopbackHub, path: str) -> int:
    with _loopback_lock:
        while True:
            port = next(_loopback_ports) % 65535 + 1
            if not hub.bound(ServerAddress("loopback", port, path)):
                return port


@dataclass
class FleetHandle:
    services: dict[int, MockService] = field(default_factory=dict)
    addresses: dict[int, list[ServerAddress]] = field(default_factory=dict)
    hub: LoopbackHub = field(default_factory=lambda: DEFAULT_HUB)
    _servers: list[_MockHTTPServer] = field(default_factory=list, repr=False)
    _threads: list[threading.Thread] = field(default_factory=list, repr=False)
    _stopping: threading.Event = field(default_factory=threading.Event, repr=False)
    running: bool = False

    def inject_fault(self, service_id: int, mode: FaultMode, delay_ms: int | None = None) -> None:
        if service_id not in self.services:
            raise UnknownService(service_id)
        self.services[service_id].set_fault(mode, delay_ms)

    def descriptor(self, service_id: int) -> ServiceDescriptor:
        if service_id not in self.services:
            raise UnknownService(service_id)
        spec = self.services[service_id].spec
        return ServiceDescriptor(
            service_id=spec.service_id,
            name=spec.name,
            protocol=spec.protocol,
            endpoints=tuple(self.addresses[service_id]),
            operations=spec.signatures(),
            soap_namespace=spec.soap_namespace,
        )

    def descriptors(self) -> list[ServiceDescriptor]:
        return [self.descriptor(sid) for sid in sorted(self.services)]

    def address_report(self) -> dict[str, list[str]]:
        return {str(sid): [str(a) for a in addrs] for sid, addrs in sorted(self.addresses.items())}

    def stop(self) -> None:
        if not self.running:
            return
        self.running = False
        self._stopping.set()
        for server in self._servers:
            server.shutdown()
            server.server_close()
        for t in self._threads:
            t.join(timeout=5)
        for sid, svc in self.services.items():
            if svc.spec.protocol is Protocol.LOOPBACK:
                for addr in self.addresses[sid]:
                    self.hub.unregister(addr)

    def __enter__(self) -> FleetHandle:
        return self

    def __exit__(self, *exc: object) -> None:
        self.stop()


def start_fleet(specs: Iterable[MockServiceSpec], hub: LoopbackHub | None = None) -> FleetHandle:
    handle = FleetHandle(hub=hub if hub is not None else DEFAULT_HUB)
    handle.running = True
    try:
        for spec in specs:
            if spec.service_id in handle.services:
                raise ValueError(f"duplicate mock service id {spec.service_id}")
            svc = MockService(spec, handle._stopping)
            handle.services[spec.service_id] = svc
            addrs: list[ServerAddress] = []
            handle.addresses[spec.service_id] = addrs
            for i in range(spec.replicas):
                port = spec.port + i if spec.port else 0
                if spec.protocol is Protocol.LOOPBACK:
                    addr = ServerAddress("loopback", port or _next_loopback_port(handle.hub, spec.path), spec.path)
                    try:
                        handle.hub.register(addr, _loopback_handler(svc))
                    except ValueError as exc:
                        raise BindFailure(str(exc)) from None
                    addrs.append(addr)
                    continue
                try:
                    server = _MockHTTPServer((spec.host, port), svc)
                except OSError as exc:
                    raise BindFailure(f"cannot bind {spec.host}:{port} for ws{spec.service_id}: {exc}") from exc
                handle._servers.append(server)
                t = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True,
                                     name=f"mock-ws{spec.service_id}-{i}")
                t.start()
                handle._threads.append(t)
                addrs.append(ServerAddress(spec.host, server.server_port, spec.path))
    except BaseException:
        handle.stop()
        raise
    return handle


def inject_fault(handle: FleetHandle, service_id: int, mode: FaultMode, delay_ms: int | None = None) -> None:
    handle.inject_fault(service_id, mode, delay_ms)


def stop_fleet(handle: FleetHandle) -> None:
    handle.stop()
