"""End-point adapters: one transport client per protocol.

All adapters share one contract, ``send(msg, server, timeout) -> WireMessage``,
and map transport trouble onto :class:`~soatest.errors.Timeout`,
:class:`~soatest.errors.ConnectionRefused` or
:class:`~soatest.errors.TransportError`.  SOAP and REST speak HTTP/1.1 POST,
one connection per request.  LOOPBACK calls a handler registered in a
:class:`LoopbackHub` under the server address; no sockets are involved.
"""

from __future__ import annotations

import http.client
import threading
import typing
from typing import Callable, Mapping

from soatest.errors import ConnectionRefused, Timeout, TransportError
from soatest.middleware import CONTENT_TYPES, WireMessage
from soatest.registry import Protocol, ServerAddress

DEFAULT_TIMEOUT_S = 5.0

# handler(request_body, timeout_s) -> response_body.  Handlers signal a
# deadline overrun with TimeoutError and a dropped link with ConnectionError.
LoopbackHandler = Callable[[bytes, float], bytes]


class Adapter(typing.Protocol):
    protocol: Protocol

    def send(self, msg: WireMessage, server: ServerAddress, timeout: float = ...) -> WireMessage: ...


def _check_protocol(adapter_protocol: Protocol, msg: WireMessage) -> None:
    if msg.protocol is not adapter_protocol:
        raise ValueError(f"{adapter_protocol.value} adapter cannot send a {msg.protocol.value} message")


class HttpAdapter:
    protocol: Protocol

    def __init__(self, protocol: Protocol) -> None:
        self.protocol = protocol

    def headers(self, msg: WireMessage) -> dict[str, str]:
        return {"Content-Type": msg.content_type, "Connection": "close"}

    def send(self, msg: WireMessage, server: ServerAddress, timeout: float = DEFAULT_TIMEOUT_S) -> WireMessage:
        _check_protocol(self.protocol, msg)
        path = server.path.rstrip("/") + msg.target if msg.target else server.path
        conn = http.client.HTTPConnection(server.host, server.port, timeout=timeout)
        try:
            conn.request("POST", path, body=msg.body, headers=self.headers(msg))
            resp = conn.getresponse()
            body = resp.read()
            return WireMessage(
                self.protocol,
                body,
                resp.getheader("Content-Type", "") or "",
                target=msg.target,
                status=resp.status,
            )
        except TimeoutError as exc:
            raise Timeout(f"no response from {server} within {timeout:g}s", exc) from exc
        except ConnectionRefusedError as exc:
            raise ConnectionRefused(f"connection to {server} refused", exc) from exc
        except (OSError, http.client.HTTPException) as exc:
            raise TransportError(f"transport failure talking to {server}: {type(exc).__name__}: {exc}", exc) from exc
        finally:
            conn.close()


class SoapAdapter(HttpAdapter):
    def __init__(self) -> None:
        super().__init__(Protocol.SOAP)

    def headers(self, msg: WireMessage) -> dict[str, str]:
        return {**super().headers(msg), "SOAPAction": '""'}


class RestAdapter(HttpAdapter):
    def __init__(self) -> None:
        super().__init__(Protocol.REST)

    def headers(self, msg: WireMessage) -> dict[str, str]:
        return {**super().headers(msg), "Accept": CONTENT_TYPES[Protocol.REST]}


class LoopbackHub:
    """Handlers for loopback services, keyed by (host, port, path)."""

    def __init__(self) -> None:
        self._handlers: dict[tuple[str, int, str], LoopbackHandler] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(server: ServerAddress) -> tuple[str, int, str]:
        return (server.host, server.port, server.path)

    def register(self, server: ServerAddress, handler: LoopbackHandler) -> None:
        with self._lock:
            if self._key(server) in self._handlers:
                raise ValueError(f"loopback address {server} already bound")
            self._handlers[self._key(server)] = handler

    def unregister(self, server: ServerAddress) -> None:
        with self._lock:
            self._handlers.pop(self._key(server), None)

    def lookup(self, server: ServerAddress) -> LoopbackHandler | None:
        with self._lock:
            return self._handlers.get(self._key(server))

    def bound(self, server: ServerAddress) -> bool:
        return self.lookup(server) is not None


DEFAULT_HUB = LoopbackHub()


class LoopbackAdapter:
    protocol = Protocol.LOOPBACK

    def __init__(self, hub: LoopbackHub | None = None) -> None:
        self.hub = hub if hub is not None else DEFAULT_HUB

    def send(self, msg: WireMessage, server: ServerAddress, timeout: float = DEFAULT_TIMEOUT_S) -> WireMessage:
        _check_protocol(self.protocol, msg)
        handler = self.hub.lookup(server)
        if handler is None:
            raise ConnectionRefused(f"no loopback handler bound at {server}")
        try:
            body = handler(msg.body, timeout)
        except TimeoutError as exc:
            raise Timeout(f"no response from {server} within {timeout:g}s", exc) from exc
        except ConnectionRefusedError as exc:
            raise ConnectionRefused(f"connection to {server} refused", exc) from exc
        except Exception as exc:
            raise TransportError(f"loopback handler at {server} failed: {type(exc).__name__}: {exc}", exc) from exc
        return WireMessage(self.protocol, body, CONTENT_TYPES[Protocol.LOOPBACK], target=msg.target)


def default_adapters(hub: LoopbackHub | None = None) -> dict[Protocol, Adapter]:
    return {
        Protocol.SOAP: SoapAdapter(),
        Protocol.REST: RestAdapter(),
        Protocol.LOOPBACK: LoopbackAdapter(hub),
    }


AdapterMap = Mapping[Protocol, Adapter]
