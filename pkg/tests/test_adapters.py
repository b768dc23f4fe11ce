from __future__ import annotations

import socket
import time

import pytest

from soatest.adapters import LoopbackAdapter, LoopbackHub, RestAdapter, SoapAdapter, default_adapters
from soatest.errors import ConnectionRefused, Timeout, TransportError
from soatest.middleware import TestRequest, TestResponse, WireMessage, from_protocol, to_protocol
from soatest.mockfleet import FaultMode, MockServiceSpec
from soatest.registry import Protocol, ServerAddress


def call(adapters, desc, *args, timeout=5.0, sid=None):
    req = TestRequest(desc.service_id, "add", tuple(str(a) for a in args))
    msg = to_protocol(req, desc)
    reply = adapters[desc.protocol].send(msg, desc.endpoints[0], timeout)
    return from_protocol(reply, desc)


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


@pytest.mark.parametrize("protocol", [Protocol.SOAP, Protocol.REST, Protocol.LOOPBACK])
def test_add_through_each_adapter(fleet, hub, protocol):
    f = fleet(MockServiceSpec(5, protocol))
    resp = call(default_adapters(hub), f.descriptor(5), 10, 20)
    assert resp == TestResponse.ok(5, "30")


def test_soap_reply_is_an_envelope(fleet):
    f = fleet(MockServiceSpec(5, Protocol.SOAP))
    desc = f.descriptor(5)
    reply = SoapAdapter().send(to_protocol(TestRequest(5, "add", ("10", "20")), desc), desc.endpoints[0])
    assert reply.status == 200
    assert reply.content_type.startswith("text/xml")
    assert b"http://www.w3.org/2001/12/soap-envelope" in reply.body
    assert b">30<" in reply.body


@pytest.mark.parametrize("adapter", [SoapAdapter(), RestAdapter()])
def test_closed_port_refused(adapter):
    msg = WireMessage(adapter.protocol, b"x", "text/xml")
    with pytest.raises(ConnectionRefused) as info:
        adapter.send(msg, ServerAddress("127.0.0.1", free_port(), "/ws"), 1.0)
    assert isinstance(info.value.cause, ConnectionRefusedError)


@pytest.mark.parametrize("protocol", [Protocol.SOAP, Protocol.REST, Protocol.LOOPBACK])
def test_delay_beyond_timeout(fleet, hub, protocol):
    f = fleet(MockServiceSpec(5, protocol))
    f.inject_fault(5, FaultMode.DELAY, delay_ms=10_000)
    start = time.monotonic()
    with pytest.raises(Timeout):
        call(default_adapters(hub), f.descriptor(5), 10, 20, timeout=0.1)
    assert time.monotonic() - start < 2.0


@pytest.mark.parametrize("protocol", [Protocol.SOAP, Protocol.REST, Protocol.LOOPBACK])
def test_dropped_connection(fleet, hub, protocol):
    f = fleet(MockServiceSpec(5, protocol))
    f.inject_fault(5, FaultMode.DROP_CONNECTION)
    with pytest.raises(TransportError) as info:
        call(default_adapters(hub), f.descriptor(5), 10, 20, timeout=2.0)
    assert not isinstance(info.value, Timeout)
    assert info.value.cause is not None


def test_silent_listener_times_out():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    s.listen(1)
    try:
        msg = WireMessage(Protocol.SOAP, b"<x/>", "text/xml")
        with pytest.raises(Timeout):
            SoapAdapter().send(msg, ServerAddress("127.0.0.1", s.getsockname()[1], "/"), 0.1)
    finally:
        s.close()


def test_rest_target_appended_to_path(fleet):
    f = fleet(MockServiceSpec(5, Protocol.REST))
    desc = f.descriptor(5)
    msg = to_protocol(TestRequest(5, "add", ("1", "2")), desc)
    assert msg.target == "/add"
    reply = RestAdapter().send(msg, desc.endpoints[0])
    assert reply.status == 200 and reply.body == b'{"result": "3"}'


def test_loopback_unbound_refused():
    adapter = LoopbackAdapter(LoopbackHub())
    with pytest.raises(ConnectionRefused):
        adapter.send(WireMessage(Protocol.LOOPBACK, b"", "application/xml"), ServerAddress("loopback", 1, "/ws1"))


def test_loopback_handler_errors_wrapped():
    hub = LoopbackHub()
    addr = ServerAddress("loopback", 1, "/ws1")

    def broken(body, timeout):
        raise KeyError("boom")

    hub.register(addr, broken)
    with pytest.raises(TransportError) as info:
        LoopbackAdapter(hub).send(WireMessage(Protocol.LOOPBACK, b"", "application/xml"), addr)
    assert isinstance(info.value.cause, KeyError)


def test_loopback_hub_binding_rules():
    hub = LoopbackHub()
    addr = ServerAddress("loopback", 1, "/ws1")
    hub.register(addr, lambda b, t: b)
    with pytest.raises(ValueError):
        hub.register(addr, lambda b, t: b)
    assert hub.bound(addr) and not hub.bound(ServerAddress("loopback", 1, "/ws2"))
    hub.unregister(addr)
    assert hub.lookup(addr) is None


def test_loopback_passes_timeout_to_handler():
    hub = LoopbackHub()
    addr = ServerAddress("loopback", 7, "/x")
    seen = []
    hub.register(addr, lambda body, timeout: seen.append(timeout) or body)
    LoopbackAdapter(hub).send(WireMessage(Protocol.LOOPBACK, b"hi", "application/xml"), addr, 0.25)
    assert seen == [0.25]


@pytest.mark.parametrize(
    "adapter,protocol",
    [(SoapAdapter(), Protocol.REST), (RestAdapter(), Protocol.LOOPBACK), (LoopbackAdapter(), Protocol.SOAP)],
)
def test_adapter_refuses_other_protocols(adapter, protocol):
    with pytest.raises(ValueError):
        adapter.send(WireMessage(protocol, b"", "x"), ServerAddress("127.0.0.1", 1, "/"))
