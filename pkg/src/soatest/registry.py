"""Local catalogue of the services under test.

Descriptors are persisted as SERVICE records in the journal; the journal's
folded state is the single source of truth, so a registry is just a view
over a :class:`~soatest.store.Journal`.

Descriptor files are JSON, one service per document::

    {
      "service_id": 5,
      "name": "calculator",
      "protocol": "SOAP",
      "endpoints": ["127.0.0.1:8080/calc"],
      "soap_namespace": "urn:soatest:calculator",
      "operations": [
        {"op_name": "add",
         "params": [{"name": "x", "type": "INT"}, {"name": "y", "type": "INT"}],
         "return_type": "INT"}
      ]
    }

A file may also hold a JSON list of such documents.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any

from soatest.errors import DuplicateId, InvalidDescriptor, UnknownOperation, UnknownService
from soatest.values import ValueType

if TYPE_CHECKING:
    from soatest.store import Journal

_XML_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")
_ADDRESS_RE = re.compile(r"(?P<host>[A-Za-z0-9](?:[A-Za-z0-9.\-]*[A-Za-z0-9])?):(?P<port>[0-9]{1,5})(?P<path>/[^\s?#]*)?\Z")


class Protocol(str, Enum):
    SOAP = "SOAP"
    REST = "REST"
    LOOPBACK = "LOOPBACK"


@dataclass(frozen=True, order=True)
class ServerAddress:
    host: str
    port: int
    path: str = "/"

    @classmethod
    def parse(cls, text: str) -> ServerAddress:
        m = _ADDRESS_RE.match(text.strip())
        if not m:
            raise ValueError(f"invalid server address {text!r} (expected host:port[/path])")
        port = int(m.group("port"))
        if not 0 < port <= 65535:
            raise ValueError(f"port out of range in {text!r}")
        return cls(m.group("host"), port, m.group("path") or "/")

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def __str__(self) -> str:
        return f"{self.host}:{self.port}{self.path}"


@dataclass(frozen=True)
class OperationSignature:
    op_name: str
    params: tuple[tuple[str, ValueType], ...]
    return_type: ValueType

    @property
    def param_names(self) -> list[str]:
        return [name for name, _ in self.params]

    @property
    def param_types(self) -> list[ValueType]:
        return [t for _, t in self.params]

    def to_dict(self) -> dict[str, Any]:
        return {
            "op_name": self.op_name,
            "params": [{"name": n, "type": t.value} for n, t in self.params],
            "return_type": self.return_type.value,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> OperationSignature:
        params = []
        for p in d.get("params", []):
            if isinstance(p, dict):
                params.append((p["name"], ValueType(p["type"])))
            else:
                name, t = p
                params.append((name, ValueType(t)))
        return cls(d["op_name"], tuple(params), ValueType(d["return_type"]))


@dataclass(frozen=True)
class ServiceDescriptor:
    service_id: int
    name: str
    protocol: Protocol
    endpoints: tuple[ServerAddress, ...]
    operations: tuple[OperationSignature, ...] = ()
    soap_namespace: str = ""

    def operation(self, op_name: str) -> OperationSignature:
        for op in self.operations:
            if op.op_name == op_name:
                return op
        raise UnknownOperation(self.service_id, op_name)

    def validate(self) -> None:
        """Raise :class:`InvalidDescriptor` naming the first broken invariant."""
        if isinstance(self.service_id, bool) or not isinstance(self.service_id, int) or self.service_id < 1:
            raise InvalidDescriptor("positive service_id", repr(self.service_id))
        if not isinstance(self.protocol, Protocol):
            raise InvalidDescriptor("known protocol", repr(self.protocol))
        if not self.endpoints:
            raise InvalidDescriptor("non-empty endpoints")
        for ep in self.endpoints:
            if not isinstance(ep, ServerAddress):
                raise InvalidDescriptor("valid endpoint address", repr(ep))
            try:
                ServerAddress.parse(str(ep))
            except ValueError as exc:
                raise InvalidDescriptor("valid endpoint address", str(exc)) from None
        if self.protocol is Protocol.SOAP and not self.soap_namespace:
            raise InvalidDescriptor("SOAP requires soap_namespace")
        seen_ops: set[str] = set()
        for op in self.operations:
            if not op.op_name:
                raise InvalidDescriptor("non-empty op_name")
            if not _XML_NAME_RE.match(op.op_name):
                raise InvalidDescriptor("op_name is an XML name", op.op_name)
            if op.op_name in seen_ops:
                raise InvalidDescriptor("unique op_name", op.op_name)
            seen_ops.add(op.op_name)
            names = [n for n, _ in op.params]
            if len(set(names)) != len(names):
                raise InvalidDescriptor("unique param_name", op.op_name)
            for n in names:
                if not _XML_NAME_RE.match(n):
                    raise InvalidDescriptor("param_name is an XML name", f"{op.op_name}.{n}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "service_id": self.service_id,
            "name": self.name,
            "protocol": self.protocol.value,
            "endpoints": [str(e) for e in self.endpoints],
            "operations": [op.to_dict() for op in self.operations],
        }
        if self.soap_namespace:
            d["soap_namespace"] = self.soap_namespace
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ServiceDescriptor:
        try:
            return cls(
                service_id=d["service_id"],
                name=d.get("name", ""),
                protocol=Protocol(d["protocol"]),
                endpoints=tuple(ServerAddress.parse(e) for e in d.get("endpoints", [])),
                operations=tuple(OperationSignature.from_dict(op) for op in d.get("operations", [])),
                soap_namespace=d.get("soap_namespace", ""),
            )
        except KeyError as exc:
            raise InvalidDescriptor("required field present", str(exc)) from None
        except ValueError as exc:
            raise InvalidDescriptor("well-formed fields", str(exc)) from None


def load_descriptors(path: str | Path) -> list[ServiceDescriptor]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidDescriptor("well-formed JSON document", str(exc)) from None
    docs = doc if isinstance(doc, list) else [doc]
    return [ServiceDescriptor.from_dict(d) for d in docs]


class Registry:
    def __init__(self, journal: Journal) -> None:
        self.journal = journal

    def register_service(self, descriptor: ServiceDescriptor) -> int:
        descriptor.validate()
        with self.journal.write_lock:
            if descriptor.service_id in self.journal.state.services:
                raise DuplicateId(descriptor.service_id)
            self.journal.append("SERVICE", descriptor.to_dict())
        return descriptor.service_id

    def update_service(self, descriptor: ServiceDescriptor) -> int:
        """Replace an existing descriptor, e.g. after a service was redeployed."""
        descriptor.validate()
        with self.journal.write_lock:
            if descriptor.service_id not in self.journal.state.services:
                raise UnknownService(descriptor.service_id)
            self.journal.append("SERVICE", descriptor.to_dict())
        return descriptor.service_id

    def lookup_service(self, service_id: int) -> ServiceDescriptor:
        try:
            return self.journal.state.services[service_id]
        except KeyError:
            raise UnknownService(service_id) from None

    def list_services(self) -> list[ServiceDescriptor]:
        with self.journal.write_lock:
            services = self.journal.state.services
            return [services[k] for k in sorted(services)]

    def signature(self, service_id: int, op_name: str) -> OperationSignature:
        return self.lookup_service(service_id).operation(op_name)
