"""Conversion between the canonical XML test format and per-protocol wire messages.

Canonical request (bit-exact, element order mandatory)::

    <request><WS-ID>5</WS-ID><function-to-call>add</function-to-call><parameters><param>10</param><param>20</param></parameters><timestamp>2/25/2012 05:22:17PM</timestamp></request>

An empty parameter list is written ``<parameters/>``.  Canonical response::

    <response><WS-ID>5</WS-ID><status>ok</status><value>30</value><timestamp>...</timestamp></response>
    <response><WS-ID>5</WS-ID><status>fault</status><fault>text</fault><timestamp>...</timestamp></response>

Text is escaped as ``&amp; &lt; &gt;`` plus ``&#13;`` for carriage return.
The parser ignores whitespace between elements and around the scalar
header fields; ``<param>`` and ``<value>`` contents are kept verbatim.

REST mapping: ``POST <endpoint path>/<op_name>`` with
``Content-Type: application/json`` and body
``{"<param_name>":"<text>",...}`` (compact separators, ASCII escaping,
signature order).  HTTP 200 answers ``{"result":"<text>"}``; any other
status is a fault whose text is the ``error`` member when present.

SOAP mapping: an envelope in the SOAP 2001/12 namespace whose body holds
``<m:<op_name>>`` with one ``<m:<param_name>>`` child per argument, ``m``
bound to the descriptor's ``soap_namespace``.

Everything here is pure; transport lives in :mod:`soatest.adapters`.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from soatest.errors import (
    ArgumentTypeError,
    ArityMismatch,
    MalformedRequest,
    MalformedResponse,
    UnsupportedProtocol,
)
from soatest.registry import Protocol, ServerAddress, ServiceDescriptor
from soatest.values import check_payload, format_timestamp, parse_timestamp, parse_value, ValueType

if TYPE_CHECKING:
    from soatest.registry import Registry

SOAP_ENV_NS = "http://www.w3.org/2001/12/soap-envelope"
SOAP_ENCODING = "http://www.w3.org/2001/12/soap-encoding"

CONTENT_TYPES = {
    Protocol.SOAP: "text/xml",
    Protocol.REST: "application/json",
    Protocol.LOOPBACK: "application/xml",
}

_REQUEST_FIELDS = ("WS-ID", "function-to-call", "parameters", "timestamp")


class ResponseStatus(str, Enum):
    OK = "ok"
    FAULT = "fault"


@dataclass(frozen=True)
class TestRequest:
    __test__ = False

    ws_id: int
    function_to_call: str
    parameters: tuple[str, ...] = ()
    timestamp: str = field(default_factory=format_timestamp, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "parameters", tuple(self.parameters))
        if isinstance(self.ws_id, bool) or not isinstance(self.ws_id, int) or self.ws_id < 1:
            raise ValueError(f"ws_id must be a positive integer, got {self.ws_id!r}")
        name = self.function_to_call
        if not name or name != name.strip():
            raise ValueError(f"function_to_call must be non-empty without surrounding space: {name!r}")
        for text in (name, self.timestamp, *self.parameters):
            check_payload(ValueType.STRING, text)


@dataclass(frozen=True)
class TestResponse:
    __test__ = False

    ws_id: int
    status: ResponseStatus
    value: str | None = None
    fault_text: str | None = None
    timestamp: str = field(default_factory=format_timestamp, compare=False)

    def __post_init__(self) -> None:
        if self.status is ResponseStatus.OK:
            if self.value is None or self.fault_text is not None:
                raise ValueError("an OK response carries a value and no fault text")
        elif self.fault_text is None or self.value is not None:
            raise ValueError("a FAULT response carries fault text and no value")

    @classmethod
    def ok(cls, ws_id: int, value: str) -> TestResponse:
        return cls(ws_id, ResponseStatus.OK, value=value)

    @classmethod
    def fault(cls, ws_id: int, text: str) -> TestResponse:
        return cls(ws_id, ResponseStatus.FAULT, fault_text=text)


@dataclass(frozen=True)
class WireMessage:
    """A protocol-level message.

    ``target`` is the resource path appended to the chosen server's base
    path (``""`` for SOAP and LOOPBACK, ``"/<op_name>"`` for REST); the
    server itself is picked later by the agent pool.  ``status`` is the
    HTTP status of a response and 200 for requests.
    """

    protocol: Protocol
    body: bytes
    content_type: str
    target: str = ""
    status: int = 200


@dataclass(frozen=True)
class Route:
    protocol: Protocol
    endpoints: tuple[ServerAddress, ...]


def escape_text(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace("\r", "&#13;")


def _escape_attr(text: str) -> str:
    return escape_text(text).replace('"', "&quot;")


# canonical request / response


def encode_request(req: TestRequest) -> bytes:
    if req.parameters:
        params = "<parameters>" + "".join(f"<param>{escape_text(p)}</param>" for p in req.parameters) + "</parameters>"
    else:
        params = "<parameters/>"
    doc = (
        f"<request><WS-ID>{req.ws_id}</WS-ID>"
        f"<function-to-call>{escape_text(req.function_to_call)}</function-to-call>"
        f"{params}"
        f"<timestamp>{escape_text(req.timestamp)}</timestamp></request>"
    )
    return doc.encode("utf-8")


def _parse_root(data: bytes, root_tag: str, error: type[Exception]) -> ET.Element:
    def fail(detail: str) -> Exception:
        return error(root_tag, detail) if error is MalformedRequest else error(f"<{root_tag}>: {detail}")

    if not data or not data.strip():
        raise fail("empty document")
    if b"<!DOCTYPE" in data or b"<!ENTITY" in data:
        raise fail("document type declarations are not accepted")
    try:
        root = ET.fromstring(data)
    except (ET.ParseError, ValueError, UnicodeError) as exc:
        raise fail(f"not well-formed XML ({exc})") from None
    if root.tag != root_tag:
        raise fail(f"root element is <{root.tag}>")
    return root


def _blank(text: str | None) -> bool:
    return text is None or not text.strip()


def _ordered_children(root: ET.Element, names: tuple[str, ...], fail) -> list[ET.Element]:
    if not _blank(root.text):
        raise fail(root.tag, "unexpected text content")
    children = list(root)
    for child in children:
        if not _blank(child.tail):
            raise fail(child.tag, "unexpected text after element")
    for i, name in enumerate(names):
        if i >= len(children):
            raise fail(name, "missing element")
        if children[i].tag != name:
            if children[i].tag in names[:i]:
                raise fail(children[i].tag, "duplicate element")
            if children[i].tag in names:
                raise fail(name, f"found <{children[i].tag}> where <{name}> belongs")
            raise fail(children[i].tag, "unexpected element")
    if len(children) > len(names):
        raise fail(children[len(names)].tag, "unexpected element")
    return children


def _leaf_text(el: ET.Element, fail) -> str:
    if len(el):
        raise fail(el.tag, f"unexpected child <{el[0].tag}>")
    return (el.text or "").strip()


def _parse_ws_id(text: str, fail) -> int:
    if not text.isdigit() or not text.isascii() or int(text) < 1:
        raise fail("WS-ID", f"not a positive integer: {text!r}")
    return int(text)


def _parse_stamp(text: str, fail) -> str:
    try:
        parse_timestamp(text)
    except ValueError:
        raise fail("timestamp", f"not a M/D/YYYY hh:mm:ssAM|PM timestamp: {text!r}") from None
    return text


def decode_request(data: bytes) -> TestRequest:
    fail = MalformedRequest
    root = _parse_root(data, "request", MalformedRequest)
    ws, fn, params_el, ts = _ordered_children(root, _REQUEST_FIELDS, fail)
    ws_id = _parse_ws_id(_leaf_text(ws, fail), fail)
    function = _leaf_text(fn, fail)
    if not function:
        raise fail("function-to-call", "empty function name")
    if not _blank(params_el.text):
        raise fail("parameters", "unexpected text content")
    params = []
    for p in params_el:
        if p.tag != "param":
            raise fail(p.tag, "only <param> elements may appear inside <parameters>")
        if len(p):
            raise fail("param", f"unexpected child <{p[0].tag}>")
        if not _blank(p.tail):
            raise fail("parameters", "unexpected text between <param> elements")
        params.append(p.text or "")
    timestamp = _parse_stamp(_leaf_text(ts, fail), fail)
    try:
        return TestRequest(ws_id, function, tuple(params), timestamp)
    except ValueError as exc:
        raise fail("request", str(exc)) from None


def encode_response(resp: TestResponse) -> bytes:
    if resp.status is ResponseStatus.OK:
        body = f"<status>ok</status><value>{escape_text(resp.value or '')}</value>"
    else:
        body = f"<status>fault</status><fault>{escape_text(resp.fault_text or '')}</fault>"
    doc = f"<response><WS-ID>{resp.ws_id}</WS-ID>{body}<timestamp>{escape_text(resp.timestamp)}</timestamp></response>"
    return doc.encode("utf-8")


def decode_response(data: bytes) -> TestResponse:
    def fail(element: str, detail: str) -> MalformedResponse:
        return MalformedResponse(f"<{element}>: {detail}")

    root = _parse_root(data, "response", MalformedResponse)
    children = list(root)
    if len(children) < 2 or children[1].tag != "status":
        raise fail("status", "missing element")
    status = _leaf_text(children[1], fail)
    if status == "ok":
        names: tuple[str, ...] = ("WS-ID", "status", "value", "timestamp")
    elif status == "fault":
        names = ("WS-ID", "status", "fault", "timestamp")
    else:
        raise fail("status", f"unknown status {status!r}")
    ws, _, payload_el, ts = _ordered_children(root, names, fail)
    ws_id = _parse_ws_id(_leaf_text(ws, fail), fail)
    if len(payload_el):
        raise fail(payload_el.tag, "unexpected child element")
    text = payload_el.text or ""
    timestamp = _leaf_text(ts, fail)
    if status == "ok":
        return TestResponse(ws_id, ResponseStatus.OK, value=text, timestamp=timestamp)
    return TestResponse(ws_id, ResponseStatus.FAULT, fault_text=text.strip() or "fault", timestamp=timestamp)


# protocol conversion


def _check_call(req: TestRequest, descriptor: ServiceDescriptor):
    if req.ws_id != descriptor.service_id:
        raise ValueError(f"request for ws {req.ws_id} converted with descriptor of ws {descriptor.service_id}")
    sig = descriptor.operation(req.function_to_call)
    if len(req.parameters) != len(sig.params):
        raise ArityMismatch(f"{sig.op_name} takes {len(sig.params)} arguments, got {len(req.parameters)}")
    for (name, t), text in zip(sig.params, req.parameters):
        try:
            parse_value(text, t)
        except ValueError as exc:
            raise ArgumentTypeError(f"{sig.op_name}.{name}: {exc}") from None
    return sig


def soap_envelope(op_name: str, namespace: str, children: list[tuple[str, str]]) -> bytes:
    lines = [
        '<?xml version="1.0"?>',
        "<soap:Envelope",
        f'  xmlns:soap="{SOAP_ENV_NS}"',
        f'  soap:encodingStyle="{SOAP_ENCODING}">',
        "<soap:Body>",
        f'  <m:{op_name} xmlns:m="{_escape_attr(namespace)}">',
        *(f"    <m:{name}>{escape_text(text)}</m:{name}>" for name, text in children),
        f"  </m:{op_name}>",
        "</soap:Body>",
        "</soap:Envelope>",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def to_protocol(req: TestRequest, descriptor: ServiceDescriptor) -> WireMessage:
    sig = _check_call(req, descriptor)
    protocol = descriptor.protocol
    if protocol is Protocol.SOAP:
        body = soap_envelope(sig.op_name, descriptor.soap_namespace, list(zip(sig.param_names, req.parameters)))
        return WireMessage(protocol, body, CONTENT_TYPES[protocol])
    if protocol is Protocol.REST:
        doc = dict(zip(sig.param_names, req.parameters))
        body = json.dumps(doc, separators=(",", ":")).encode("ascii")
        return WireMessage(protocol, body, CONTENT_TYPES[protocol], target=f"/{sig.op_name}")
    if protocol is Protocol.LOOPBACK:
        return WireMessage(protocol, encode_request(req), CONTENT_TYPES[protocol])
    raise UnsupportedProtocol(f"no conversion for protocol {protocol!r}")


def _local(tag: str) -> str:
    return tag.rpartition("}")[2]


def _soap_response(msg: WireMessage, ws_id: int) -> TestResponse:
    try:
        root = ET.fromstring(msg.body)
    except (ET.ParseError, ValueError, UnicodeError) as exc:
        if msg.status != 200:
            return TestResponse.fault(ws_id, f"HTTP {msg.status}")
        raise MalformedResponse(f"SOAP body is not well-formed XML ({exc})") from None
    if root.tag != f"{{{SOAP_ENV_NS}}}Envelope":
        raise MalformedResponse(f"SOAP root element is <{root.tag}>")
    body = root.find(f"{{{SOAP_ENV_NS}}}Body")
    if body is None or not len(body):
        raise MalformedResponse("SOAP envelope has no body content")
    payload = body[0]
    if payload.tag == f"{{{SOAP_ENV_NS}}}Fault":
        texts = [(el.text or "").strip() for el in payload.iter() if _local(el.tag) in ("faultstring", "Text")]
        text = next((t for t in texts if t), "") or " ".join(t.strip() for t in payload.itertext() if t.strip())
        return TestResponse.fault(ws_id, text or "SOAP fault")
    if msg.status != 200:
        return TestResponse.fault(ws_id, f"HTTP {msg.status}")
    if len(payload) != 1 or len(payload[0]):
        raise MalformedResponse(f"<{_local(payload.tag)}> must hold exactly one result element")
    return TestResponse.ok(ws_id, payload[0].text or "")


def _json_text(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (int, str)):
        return str(value)
    raise MalformedResponse(f"REST result has unsupported JSON type {type(value).__name__}")


def _rest_response(msg: WireMessage, ws_id: int) -> TestResponse:
    try:
        doc = json.loads(msg.body.decode("utf-8")) if msg.body else None
    except (ValueError, UnicodeError) as exc:
        if msg.status != 200:
            return TestResponse.fault(ws_id, f"HTTP {msg.status}")
        raise MalformedResponse(f"REST body is not JSON ({exc})") from None
    if msg.status != 200:
        text = doc.get("error") if isinstance(doc, dict) else None
        return TestResponse.fault(ws_id, str(text) if text else f"HTTP {msg.status}")
    if not isinstance(doc, dict) or "result" not in doc:
        raise MalformedResponse('REST body lacks a "result" member')
    return TestResponse.ok(ws_id, _json_text(doc["result"]))


def from_protocol(msg: WireMessage, descriptor: ServiceDescriptor) -> TestResponse:
    if msg.protocol is not descriptor.protocol:
        raise UnsupportedProtocol(f"{msg.protocol.value} message for {descriptor.protocol.value} service")
    ws_id = descriptor.service_id
    if msg.protocol is Protocol.SOAP:
        resp = _soap_response(msg, ws_id)
    elif msg.protocol is Protocol.REST:
        resp = _rest_response(msg, ws_id)
    elif msg.protocol is Protocol.LOOPBACK:
        resp = decode_response(msg.body)
        if resp.ws_id != ws_id:
            raise MalformedResponse(f"response names ws {resp.ws_id}, expected {ws_id}")
    else:
        raise UnsupportedProtocol(f"no conversion for protocol {msg.protocol!r}")
    return resp


def route(req: TestRequest, registry: Registry) -> Route:
    descriptor = registry.lookup_service(req.ws_id)
    return Route(descriptor.protocol, descriptor.endpoints)
