"""Deterministic virtual-time message passing.

Everything in a run is driven by one event loop. Events are ordered by
``(time, sequence)`` so equal-time events fire in insertion order, which
together with a per-channel arrival floor keeps every ``(src, dst)`` channel
FIFO. Client tasks are greenlets: they run until they block on a reply and
are switched back in by the loop when the reply's delivery event fires.
"""
from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from itertools import count

import greenlet

from .errors import ConfigurationError, DeadlockError
from .objects import NIL


class MessageKind(str, enum.Enum):
    CREATE_REQ = "CreateReq"
    CREATE_REPLY = "CreateReply"
    FETCH_REQ = "FetchReq"
    FETCH_REPLY = "FetchReply"
    PREFETCH_DELIVERY = "PrefetchDelivery"
    WRITE_BACK = "WriteBack"
    WRITE_BACK_ACK = "WriteBackAck"
    SEM_WAIT = "SemWait"
    SEM_GRANT = "SemGrant"
    SEM_SIGNAL = "SemSignal"
    SEM_SIGNAL_ACK = "SemSignalAck"
    BARRIER_ENTER = "BarrierEnter"
    BARRIER_RELEASE = "BarrierRelease"
    PREFETCH_TASK_FORWARD = "PrefetchTaskForward"

    def __str__(self):
        return self.value


#: Kinds a server treats as real (client-originated) requests.
REQUEST_KINDS = frozenset({
    MessageKind.CREATE_REQ, MessageKind.FETCH_REQ, MessageKind.WRITE_BACK,
    MessageKind.SEM_WAIT, MessageKind.SEM_SIGNAL, MessageKind.BARRIER_ENTER,
})


class Message:
    """One protocol message. Unused payload fields stay at their defaults."""

    __slots__ = ("kind", "src", "dst", "oid", "obj", "depth", "client",
                 "data_size", "ref_count", "ok", "expansion", "tag")

    def __init__(self, kind, src, dst, oid=NIL, obj=None, depth=None, client=None,
                 data_size=0, ref_count=0, ok=True, expansion=None, tag=None):
        self.kind = kind
        self.src = src
        self.dst = dst
        self.oid = oid
        self.obj = obj
        self.depth = depth
        self.client = client
        self.data_size = data_size
        self.ref_count = ref_count
        self.ok = ok
        self.expansion = expansion
        self.tag = tag

    @property
    def size(self) -> int:
        """Payload bytes charged by the per-byte transfer cost."""
        return self.obj.nbytes if self.obj is not None else 0

    def __repr__(self):
        return f"Message({self.kind}, {self.src}->{self.dst}, {self.oid})"


@dataclass(frozen=True)
class CostModel:
    msg_latency: float = 50.0
    server_service_cost: float = 20.0
    per_byte_cost: float = 0.0
    local_access_cost: float = 1.0
    #: client time to take in one unsolicited prefetch delivery
    receive_cost: float = 0.0
    #: client time to discard one replica during a cache clear
    clear_cost: float = 0.0

    def __post_init__(self):
        for name in ("msg_latency", "server_service_cost", "per_byte_cost", "local_access_cost",
                     "receive_cost", "clear_cost"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def transfer_time(self, nbytes: int) -> float:
        return self.msg_latency + nbytes * self.per_byte_cost


class EventQueue:
    """Min-heap of ``(time, seq, fn, args)`` with insertion-order tie-break."""

    __slots__ = ("_heap", "_seq")

    def __init__(self):
        self._heap = []
        self._seq = count()

    def push(self, time, fn, *args):
        heapq.heappush(self._heap, (time, next(self._seq), fn, args))

    def pop(self):
        time, _, fn, args = heapq.heappop(self._heap)
        return time, fn, args

    def peek_time(self):
        return self._heap[0][0] if self._heap else None

    def __len__(self):
        return len(self._heap)


class Simulator:
    """Event loop plus the message fabric connecting cells.

    Cells are integers; anything registered with :meth:`add_cell` must expose
    ``receive(msg)``. Client tasks are registered with :meth:`spawn`.
    """

    def __init__(self, cost: CostModel | None = None, trace=None):
        self.cost = cost or CostModel()
        self.now = 0.0
        self.queue = EventQueue()
        self.cells = {}
        self.trace = trace
        self.messages_sent = 0
        self.sent_by_kind = {}
        self._channel_floor = {}
        self._tasks = []
        self._loop = None

    def add_cell(self, cell: int, endpoint) -> None:
        if cell in self.cells:
            raise ConfigurationError(f"cell {cell} registered twice")
        self.cells[cell] = endpoint

    def schedule(self, time, fn, *args):
        self.queue.push(time, fn, *args)

    def post(self, msg: Message, now=None) -> float:
        """Schedule delivery of ``msg`` sent at ``now``; returns the arrival time."""
        if msg.dst not in self.cells:
            raise ConfigurationError(f"unknown destination cell {msg.dst}")
        if msg.src not in self.cells:
            raise ConfigurationError(f"unknown source cell {msg.src}")
        sent = self.now if now is None else now
        arrival = sent + self.cost.transfer_time(msg.size)
        key = (msg.src, msg.dst)
        floor = self._channel_floor.get(key)
        if floor is not None and arrival < floor:
            arrival = floor
        self._channel_floor[key] = arrival
        self.messages_sent += 1
        kind = msg.kind
        self.sent_by_kind[kind] = self.sent_by_kind.get(kind, 0) + 1
        self.queue.push(arrival, self._deliver, msg)
        return arrival

    def _deliver(self, msg: Message):
        if self.trace is not None:
            depth = "" if msg.depth is None else msg.depth
            self.trace.write(f"{self.now:g}\t{msg.kind}\t{msg.src}\t{msg.dst}\t{msg.oid}\t{depth}\n")
        self.cells[msg.dst].receive(msg)

    # -- client tasks ------------------------------------------------------

    def spawn(self, task) -> None:
        """Register a client task: an object with ``start()``, ``finished`` and ``waiting``."""
        self._tasks.append(task)

    def make_greenlet(self, fn):
        return greenlet.greenlet(fn, parent=self._loop)

    def switch_to_loop(self):
        return self._loop.switch()

    def run(self) -> float:
        """Dispatch events until the queue drains; returns the final clock."""
        self._loop = greenlet.getcurrent()
        for task in self._tasks:
            self.schedule(self.now, task.start)
        queue = self.queue
        while queue:
            time, fn, args = queue.pop()
            if time > self.now:
                self.now = time
            fn(*args)
        blocked = {t.index: t.waiting for t in self._tasks if not t.finished}
        if blocked:
            raise DeadlockError(blocked)
        # a task may finish with local work past the last event
        for t in self._tasks:
            if t.now > self.now:
                self.now = t.now
        return self.now
