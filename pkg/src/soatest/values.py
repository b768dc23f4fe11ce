"""Typed values and their text form.

Every argument and result travelling through the harness is a
:class:`TypedValue`.  On the wire all values are text; the
:func:`format_value` / :func:`parse_value` pair is the single place that
defines how each :class:`ValueType` is spelled:

* INT    decimal, optional leading ``-``
* FLOAT  shortest round-tripping decimal (``repr``), ``inf`` / ``-inf``
* BOOL   ``true`` / ``false``
* STRING as-is (XML escaping is the serializer's job)

Parsing of INT, FLOAT and BOOL ignores surrounding whitespace; STRING is
taken verbatim.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Any, Union

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1

_INT_RE = re.compile(r"-?[0-9]+\Z")
# Characters allowed by the XML 1.0 Char production.
_XML_ILLEGAL = re.compile("[^\t\n\r\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


class ValueType(str, Enum):
    INT = "INT"
    FLOAT = "FLOAT"
    STRING = "STRING"
    BOOL = "BOOL"


Payload = Union[int, float, str, bool]


@dataclass(frozen=True)
class TypedValue:
    value_type: ValueType
    payload: Payload

    def __post_init__(self) -> None:
        check_payload(self.value_type, self.payload)

    @classmethod
    def int(cls, v: int) -> TypedValue:
        return cls(ValueType.INT, v)

    @classmethod
    def float(cls, v: float) -> TypedValue:
        return cls(ValueType.FLOAT, v)

    @classmethod
    def string(cls, v: str) -> TypedValue:
        return cls(ValueType.STRING, v)

    @classmethod
    def bool(cls, v: bool) -> TypedValue:
        return cls(ValueType.BOOL, v)

    def text(self) -> str:
        return format_value(self)

    def to_dict(self) -> dict[str, str]:
        return {"type": self.value_type.value, "value": format_value(self)}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> TypedValue:
        return parse_value(d["value"], ValueType(d["type"]))

    def __str__(self) -> str:
        return format_value(self)


def check_payload(value_type: ValueType, payload: Any) -> None:
    """Raise ``ValueError`` unless *payload* is representable in *value_type*."""
    if value_type is ValueType.INT:
        if isinstance(payload, bool) or not isinstance(payload, int):
            raise ValueError(f"INT payload must be int, got {type(payload).__name__}")
        if not INT_MIN <= payload <= INT_MAX:
            raise ValueError(f"INT payload {payload} outside 64-bit signed range")
    elif value_type is ValueType.FLOAT:
        if not isinstance(payload, float):
            raise ValueError(f"FLOAT payload must be float, got {type(payload).__name__}")
        if math.isnan(payload):
            raise ValueError("FLOAT payload must not be NaN")
    elif value_type is ValueType.STRING:
        if not isinstance(payload, str):
            raise ValueError(f"STRING payload must be str, got {type(payload).__name__}")
        bad = _XML_ILLEGAL.search(payload)
        if bad:
            raise ValueError(f"STRING payload contains non-XML character {bad.group()!r}")
    elif value_type is ValueType.BOOL:
        if not isinstance(payload, bool):
            raise ValueError(f"BOOL payload must be bool, got {type(payload).__name__}")
    else:  # pragma: no cover
        raise ValueError(f"unknown value type {value_type!r}")


def format_value(v: TypedValue) -> str:
    t, p = v.value_type, v.payload
    if t is ValueType.INT:
        return str(p)
    if t is ValueType.FLOAT:
        return repr(p)
    if t is ValueType.BOOL:
        return "true" if p else "false"
    return p  # type: ignore[return-value]


def parse_value(text: str, value_type: ValueType) -> TypedValue:
    """Inverse of :func:`format_value`; raises ``ValueError`` on bad text."""
    if value_type is ValueType.STRING:
        return TypedValue(ValueType.STRING, text)
    s = text.strip()
    if value_type is ValueType.INT:
        if not _INT_RE.match(s):
            raise ValueError(f"not an INT: {text!r}")
        return TypedValue(ValueType.INT, int(s))
    if value_type is ValueType.FLOAT:
        try:
            f = float(s)
        except ValueError:
            raise ValueError(f"not a FLOAT: {text!r}") from None
        if "_" in s:
            raise ValueError(f"not a FLOAT: {text!r}")
        return TypedValue(ValueType.FLOAT, f)
    if value_type is ValueType.BOOL:
        if s == "true":
            return TypedValue(ValueType.BOOL, True)
        if s == "false":
            return TypedValue(ValueType.BOOL, False)
        raise ValueError(f"not a BOOL: {text!r}")
    raise ValueError(f"unknown value type {value_type!r}")  # pragma: no cover


def coerce(raw: Any, value_type: ValueType) -> TypedValue:
    """Build a TypedValue from a plain Python value or its text form."""
    if isinstance(raw, TypedValue):
        if raw.value_type is not value_type:
            raise ValueError(f"expected {value_type.value}, got {raw.value_type.value}")
        return raw
    if isinstance(raw, str) and value_type is not ValueType.STRING:
        return parse_value(raw, value_type)
    if value_type is ValueType.FLOAT and isinstance(raw, int) and not isinstance(raw, bool):
        raw = float(raw)
    return TypedValue(value_type, raw)


def format_timestamp(dt: datetime | None = None) -> str:
    """Render ``M/D/YYYY hh:mm:ssAM`` (12-hour clock, unpadded month/day)."""
    dt = dt or datetime.now()
    hour = dt.hour % 12 or 12
    suffix = "AM" if dt.hour < 12 else "PM"
    return f"{dt.month}/{dt.day}/{dt.year} {hour:02d}:{dt.minute:02d}:{dt.second:02d}{suffix}"


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text.strip(), "%m/%d/%Y %I:%M:%S%p")
