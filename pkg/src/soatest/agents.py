"""In-process agent pool.

Every dispatch runs on one agent.  Agents are FREE, BUSY or OFFLINE; an
acquisition takes the lowest-numbered FREE agent, waiting on a condition
variable (never spinning) until one frees up or the timeout lapses.  The
server for each dispatch is chosen round-robin over the target service's
endpoint list, with an independent cursor per service.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from soatest.adapters import DEFAULT_TIMEOUT_S, AdapterMap, default_adapters
from soatest.errors import AcquireTimeout, IllegalTransition, UnknownAgent
from soatest.middleware import WireMessage
from soatest.registry import ServerAddress

if TYPE_CHECKING:
    from soatest.registry import Registry

log = logging.getLogger(__name__)

DEFAULT_POOL_SIZE = 4


class AgentState(str, Enum):
    FREE = "FREE"
    BUSY = "BUSY"
    OFFLINE = "OFFLINE"


@dataclass
class Agent:
    agent_id: int
    state: AgentState = AgentState.FREE
    offline_pending: bool = False
    owner: object | None = field(default=None, repr=False)
    dispatches: int = 0


@dataclass
class AgentHandle:
    """Proof of ownership of one BUSY agent; ``server`` is set by dispatch."""

    agent_id: int
    token: object = field(default_factory=object, repr=False)
    server: ServerAddress | None = None


class AgentPool:
    def __init__(
        self,
        registry: Registry,
        size: int = DEFAULT_POOL_SIZE,
        adapters: AdapterMap | None = None,
        dispatch_timeout: float = DEFAULT_TIMEOUT_S,
    ) -> None:
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self.registry = registry
        self.adapters = adapters if adapters is not None else default_adapters()
        self.dispatch_timeout = dispatch_timeout
        self._agents = [Agent(i) for i in range(size)]
        self._cond = threading.Condition()
        self._cursors: dict[int, int] = {}
        self._cursor_lock = threading.Lock()
        self._in_flight: set[int] = set()

    @property
    def size(self) -> int:
        return len(self._agents)

    def states(self) -> list[AgentState]:
        with self._cond:
            return [a.state for a in self._agents]

    def _agent(self, agent_id: int) -> Agent:
        if not isinstance(agent_id, int) or not 0 <= agent_id < len(self._agents):
            raise UnknownAgent(f"no agent {agent_id!r} in a pool of {len(self._agents)}")
        return self._agents[agent_id]

    def acquire_agent(self, timeout: float = DEFAULT_TIMEOUT_S) -> AgentHandle:
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                for agent in self._agents:
                    if agent.state is AgentState.FREE:
                        handle = AgentHandle(agent.agent_id)
                        agent.state = AgentState.BUSY
                        agent.owner = handle.token
                        return handle
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise AcquireTimeout(f"no free agent within {timeout:g}s")
                self._cond.wait(remaining)

    def release(self, handle: AgentHandle) -> None:
        with self._cond:
            agent = self._agent(handle.agent_id)
            if agent.owner is not handle.token:
                raise IllegalTransition(f"handle does not own agent {handle.agent_id}")
            agent.owner = None
            agent.state = AgentState.OFFLINE if agent.offline_pending else AgentState.FREE
            agent.offline_pending = False
            self._cond.notify_all()

    def set_agent_state(self, agent_id: int, state: AgentState) -> None:
        """Take an agent OFFLINE or bring it back to FREE.

        A BUSY agent asked to go OFFLINE finishes its dispatch first; the
        change is applied on release.  Asking a BUSY agent to become FREE
        only cancels such a pending change.
        """
        state = AgentState(state)
        with self._cond:
            agent = self._agent(agent_id)
            if state is AgentState.BUSY:
                raise IllegalTransition("agents become BUSY only through acquisition")
            if agent.state is AgentState.BUSY:
                if state is AgentState.OFFLINE:
                    agent.offline_pending = True
                elif agent.offline_pending:
                    agent.offline_pending = False
                else:
                    raise IllegalTransition(f"agent {agent_id} is BUSY and is freed by its own release")
                return
            agent.state = state
            self._cond.notify_all()

    def next_server(self, service_id: int) -> ServerAddress:
        endpoints = self.registry.lookup_service(service_id).endpoints
        with self._cursor_lock:
            n = self._cursors.get(service_id, 0)
            self._cursors[service_id] = n + 1
        return endpoints[n % len(endpoints)]

    def dispatch(
        self,
        handle: AgentHandle,
        msg: WireMessage,
        service_id: int,
        timeout: float | None = None,
    ) -> WireMessage:
        try:
            with self._cond:
                agent = self._agent(handle.agent_id)
                if agent.state is not AgentState.BUSY or agent.owner is not handle.token:
                    raise IllegalTransition(f"agent {handle.agent_id} is not held by this handle")
                if handle.agent_id in self._in_flight:
                    raise RuntimeError(f"agent {handle.agent_id} already has a dispatch in flight")
                self._in_flight.add(handle.agent_id)
                agent.dispatches += 1
            try:
                server = self.next_server(service_id)
                handle.server = server
                adapter = self.adapters[msg.protocol]
                return adapter.send(msg, server, self.dispatch_timeout if timeout is None else timeout)
            finally:
                with self._cond:
                    self._in_flight.discard(handle.agent_id)
        finally:
            try:
                self.release(handle)
            except IllegalTransition:
                log.debug("agent %d already released", handle.agent_id)
