"""Exception hierarchy shared by every unit of the harness."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all harness errors."""


# registry / lookup


class InvalidDescriptor(HarnessError, ValueError):
    def __init__(self, invariant: str, detail: str = "") -> None:
        self.invariant = invariant
        msg = f"descriptor violates {invariant}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class DuplicateId(HarnessError):
    def __init__(self, service_id: int) -> None:
        self.service_id = service_id
        super().__init__(f"service {service_id} already registered")


class UnknownService(HarnessError, LookupError):
    def __init__(self, service_id: int) -> None:
        self.service_id = service_id
        super().__init__(f"unknown service {service_id}")


class UnknownOperation(HarnessError, LookupError):
    def __init__(self, service_id: int, op_name: str) -> None:
        self.service_id = service_id
        self.op_name = op_name
        super().__init__(f"service {service_id} has no operation {op_name!r}")


class ArityMismatch(HarnessError, ValueError):
    pass


class ArgumentTypeError(HarnessError, ValueError):
    pass


# store


class StoreUnavailable(HarnessError):
    pass


class UnknownCase(HarnessError, LookupError):
    pass


class UnknownRun(HarnessError, LookupError):
    pass


class CorruptJournal(UserWarning):
    """Warning emitted when a journal has an unreadable tail.

    ``last_valid_seq`` is the sequence number of the last record that
    was loaded (0 when nothing was).
    """

    def __init__(self, message: str, last_valid_seq: int, line_no: int) -> None:
        super().__init__(message)
        self.last_valid_seq = last_valid_seq
        self.line_no = line_no


# codegen


class OracleAbsent(HarnessError):
    pass


class OracleFailure(HarnessError):
    pass


# middleware


class MalformedRequest(HarnessError, ValueError):
    def __init__(self, element: str, detail: str) -> None:
        self.element = element
        super().__init__(f"<{element}>: {detail}")


class MalformedResponse(HarnessError, ValueError):
    pass


class UnsupportedProtocol(HarnessError):
    pass


# transport


class TransportError(HarnessError):
    def __init__(self, message: str, cause: BaseException | None = None) -> None:
        super().__init__(message)
        self.cause = cause


class Timeout(TransportError):
    pass


class ConnectionRefused(TransportError):
    pass


# agents


class AcquireTimeout(HarnessError):
    pass


class UnknownAgent(HarnessError, LookupError):
    pass


class IllegalTransition(HarnessError):
    pass


# engine


class NoCases(HarnessError):
    pass


class EmptySelection(HarnessError):
    pass


class Inconclusive(HarnessError):
    pass


# mockfleet


class BindFailure(HarnessError):
    pass
