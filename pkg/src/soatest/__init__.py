"""Distributed, cross-protocol regression test harness for web services."""

from soatest.engine import CompositeScenario, CompositeStep, Engine, PIPE, RunConfig
from soatest.monitor import Reason, RunReport, Verdict, compare
from soatest.registry import OperationSignature, Protocol, Registry, ServerAddress, ServiceDescriptor
from soatest.store import Journal, load_all
from soatest.testgen import Boundary, CaseStatus, ExpectedSource, Explicit, Random, TestCase, generate_cases
from soatest.values import TypedValue, ValueType

__all__ = [
    "Boundary",
    "CaseStatus",
    "CompositeScenario",
    "CompositeStep",
    "Engine",
    "ExpectedSource",
    "Explicit",
    "Journal",
    "OperationSignature",
    "PIPE",
    "Protocol",
    "Random",
    "Reason",
    "Registry",
    "RunConfig",
    "RunReport",
    "ServerAddress",
    "ServiceDescriptor",
    "TestCase",
    "TypedValue",
    "ValueType",
    "Verdict",
    "compare",
    "generate_cases",
    "load_all",
]

__version__ = "0.1.0"
