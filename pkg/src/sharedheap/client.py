"""Client-side object manager: object cache, resident object table, fetching.

Application code runs inside a client task and calls the methods here as
ordinary blocking functions. Local work advances the client's own clock;
before touching shared state the client lets the event loop catch up to that
clock, so anything that arrived in the meantime (prefetch deliveries in
particular) is visible. Remote operations block the task until the reply's
delivery event resumes it.
"""
from __future__ import annotations

from contextlib import contextmanager
from itertools import count

from .errors import AllocationError, ConfigurationError, NilReferenceError
from .objects import ObjectId, new_object, object_nbytes
from .transport import Message, MessageKind as K


class Handle:
    """An object id plus a cached index into the resident object table.

    The index is a hint: it is checked on every use and falls back to a full
    table search once the entry has been evicted.
    """

    __slots__ = ("oid", "slot")

    def __init__(self, oid: ObjectId, slot: int = -1):
        self.oid = oid
        self.slot = slot

    def __repr__(self):
        return f"Handle({self.oid}, slot={self.slot})"


class Entry:
    __slots__ = ("oid", "obj", "dirty", "touched", "stamp", "nbytes", "slot")

    def __init__(self, oid, obj, dirty, touched, stamp, slot):
        self.oid = oid
        self.obj = obj
        self.dirty = dirty
        self.touched = touched
        self.stamp = stamp
        self.nbytes = obj.nbytes
        self.slot = slot


class LocalObjectManager:
    """One client cell: the cache, its table, and the blocking client API."""

    def __init__(self, sim, cell, index, *, num_servers, num_clients, metrics,
                 capacity_bytes, clear_fraction=0.25, program=None, write_log=None):
        if capacity_bytes <= 0:
            raise ConfigurationError("client cache capacity must be positive")
        if not 0 < clear_fraction <= 1:
            raise ConfigurationError("clear_fraction must be in (0, 1]")
        self.sim = sim
        self.cost = sim.cost
        self.cell = cell
        self.index = index
        self.num_servers = num_servers
        self.num_clients = num_clients
        self.metrics = metrics
        self.counters = metrics.counters_for(cell)
        self.capacity = capacity_bytes
        self.clear_fraction = clear_fraction
        self.program = program
        self.write_log = write_log
        self.result = None

        self.now = 0.0
        self.used_bytes = 0
        self._slots = []
        self._free_slots = []
        self._rot = {}
        self._tick = 0

        self._inbound = {}
        self._replies = {}
        self._tags = count()
        self._next_create_server = index % num_servers
        self._installing = False
        self._receive_debt = 0.0
        self.waiting = None
        self.finished = False
        self._glet = None

    # -- task plumbing --------------------------------------------------------

    def start(self):
        self._glet = self.sim.make_greenlet(self._main)
        self._glet.switch()

    def _main(self):
        self.now = self.sim.now
        if self.program is not None:
            self.result = self.program(self)
        self.metrics.client_finished(self.cell, self.now)
        self.finished = True

    def _resume(self):
        self._glet.switch()

    def _sync(self):
        """Let the event loop run up to this client's clock, then take deliveries."""
        t = self.sim.queue.peek_time()
        if t is not None and t <= self.now:
            self.sim.schedule(self.now, self._resume)
            self.sim.switch_to_loop()
        if self._inbound and not self._installing:
            self._install_inbound()
        self._pay_receive_debt()

    def _pay_receive_debt(self):
        debt = self._receive_debt
        if debt:
            self._receive_debt = 0.0
            self.now += debt
            self.metrics.record(self.cell, "fetch", debt)

    def _block_until(self, ready, what) -> float:
        start = self.now
        while not ready():
            self.waiting = what
            self.sim.switch_to_loop()
        self.waiting = None
        return self.now - start

    def _post(self, kind, dst, **fields):
        self.sim.post(Message(kind, self.cell, dst, **fields), self.now)

    def receive(self, msg: Message):
        kind = msg.kind
        if kind is K.PREFETCH_DELIVERY:
            self._receive_debt += self.cost.receive_cost
            self.counters["prefetch_received"] += 1
            if msg.oid in self._inbound:
                self.counters["duplicates"] += 1
            else:
                self._inbound[msg.oid] = (True, msg.obj)
        elif kind is K.FETCH_REPLY:
            if msg.oid in self._inbound:
                self.counters["late_replies"] += 1
            else:
                self._inbound[msg.oid] = (False, msg.obj)
        elif kind is K.CREATE_REPLY:
            self._replies[(kind, msg.tag)] = msg
        elif kind is K.BARRIER_RELEASE:
            self._replies[(kind, None)] = msg
        else:
            self._replies[(kind, msg.oid)] = msg
        if self.waiting is not None:
            self.now = self.sim.now
            self._glet.switch()

    # -- resident object table ---------------------------------------------

    def handle(self, oid: ObjectId) -> Handle:
        return Handle(oid)

    def _lookup(self, h: Handle):
        slot = h.slot
        if 0 <= slot < len(self._slots):
            e = self._slots[slot]
            if e is not None and e.oid == h.oid:
                return e
        self.counters["rot_searches"] += 1
        slot = self._rot.get(h.oid)
        if slot is None:
            return None
        h.slot = slot
        return self._slots[slot]

    def is_resident(self, oid: ObjectId) -> bool:
        return oid in self._rot

    def entry(self, oid: ObjectId):
        slot = self._rot.get(oid)
        return None if slot is None else self._slots[slot]

    def resident_ids(self):
        return list(self._rot)

    def _install(self, oid, obj, *, dirty, touched) -> Entry:
        need = obj.nbytes
        if need > self.capacity:
            raise ConfigurationError(
                f"object {oid} ({need} bytes) exceeds client cache capacity {self.capacity}")
        if self.used_bytes + need > self.capacity:
            self.evict(need)
        self._tick += 1
        if self._free_slots:
            slot = self._free_slots.pop()
        else:
            slot = len(self._slots)
            self._slots.append(None)
        e = Entry(oid, obj, dirty, touched, self._tick, slot)
        self._slots[slot] = e
        self._rot[oid] = slot
        self.used_bytes += need
        assert self.used_bytes <= self.capacity
        self.metrics.high_water(self.cell, "cache_high_water", self.used_bytes)
        return e

    def _remove(self, e: Entry):
        del self._rot[e.oid]
        self._slots[e.slot] = None
        self._free_slots.append(e.slot)
        self.used_bytes -= e.nbytes

    def evict(self, bytes_needed: int) -> int:
        """Discard least recently used replicas until enough space is free.

        Frees at least ``max(bytes_needed, clear_fraction * capacity)``.
        Dirty victims are written back first and the client blocks until
        every write-back is acknowledged. Returns the bytes freed.
        """
        if bytes_needed > self.capacity:
            raise ConfigurationError(f"cannot free {bytes_needed} bytes from a "
                                     f"{self.capacity}-byte cache")
        target = max(bytes_needed, self.clear_fraction * self.capacity)
        free = self.capacity - self.used_bytes
        victims = []
        for e in sorted((e for e in self._slots if e is not None), key=lambda e: e.stamp):
            if free >= target:
                break
            victims.append(e)
            free += e.nbytes
        self.counters["clear_events"] += 1
        self._write_back([e for e in victims if e.dirty])
        freed = 0
        for e in victims:
            if not e.touched:
                self.counters["untouched_evicted"] += 1
            self._remove(e)
            freed += e.nbytes
        self.counters["evicted"] += len(victims)
        if self.cost.clear_cost:
            cleared = len(victims) * self.cost.clear_cost
            self.now += cleared
            self.metrics.record(self.cell, "clear", cleared)
        return freed

    def _write_back(self, entries):
        if not entries:
            return
        for e in entries:
            self._post(K.WRITE_BACK, e.oid.server_index, oid=e.oid, obj=e.obj.copy())
        self.counters["writebacks"] += len(entries)
        keys = [(K.WRITE_BACK_ACK, e.oid) for e in entries]
        replies = self._replies
        # acks come back in order on the one channel per server, so the
        # final ack for each server implies the rest
        finals = {}
        for k in keys:
            finals[k[1].server_index] = k
        finals = list(finals.values())
        waited = self._block_until(lambda: all(k in replies for k in finals),
                                   f"WriteBackAck x{len(keys)}")
        for k in keys:
            del replies[k]
        inbound = self._inbound
        for e in entries:
            e.dirty = False
            # channels are FIFO: a copy that beat the ack predates the write-back
            stale = inbound.pop(e.oid, None)
            if stale is not None and stale[0]:
                self.counters["duplicates"] += 1
        self.metrics.record(self.cell, "clear", waited)

    def _install_inbound(self):
        self._installing = True
        try:
            inbound = self._inbound
            while inbound:
                oid = next(iter(inbound))
                is_prefetch, obj = inbound.pop(oid)
                if not is_prefetch:
                    # reply to a fetch already satisfied by a prefetch delivery
                    self.counters["late_replies"] += 1
                else:
                    self.accept_prefetch_delivery(oid, obj)
        finally:
            self._installing = False

    def accept_prefetch_delivery(self, oid: ObjectId, obj):
        if oid in self._rot:
            self.counters["duplicates"] += 1
            return None
        return self._install(oid, obj, dirty=False, touched=False)

    # -- access ---------------------------------------------------------------

    def resolve(self, h) -> Entry:
        """Return the resident entry for ``h``, demand-fetching it if needed."""
        if isinstance(h, ObjectId):
            h = Handle(h)
        oid = h.oid
        if oid.server_index < 0:
            raise NilReferenceError()
        self._sync()
        e = self._lookup(h)
        if e is None:
            e = self._demand_fetch(oid)
            h.slot = e.slot
        if not e.touched:
            e.touched = True
            self.counters["prefetch_hits"] += 1
        self._tick += 1
        e.stamp = self._tick
        self.now += self.cost.local_access_cost
        self.counters["local_accesses"] += 1
        return e

    def _demand_fetch(self, oid) -> Entry:
        self._post(K.FETCH_REQ, oid.server_index, oid=oid)
        self.counters["demand_fetches"] += 1
        inbound = self._inbound
        waited = self._block_until(lambda: oid in inbound, f"FetchReply {oid}")
        self.metrics.record(self.cell, "fetch", waited)
        self._pay_receive_debt()
        _, obj = inbound.pop(oid)
        return self._install(oid, obj, dirty=False, touched=True)

    def read_data(self, h) -> bytes:
        return bytes(self.resolve(h).obj.data)

    def read_ref(self, h, index: int) -> ObjectId:
        refs = self.resolve(h).obj.refs
        if not 0 <= index < len(refs):
            raise IndexError(f"ref index {index} out of range for {len(refs)} refs")
        return refs[index]

    def read_refs(self, h) -> tuple:
        return tuple(self.resolve(h).obj.refs)

    def read_object(self, h):
        """Data and references of one object for the price of a single access."""
        obj = self.resolve(h).obj
        return bytes(obj.data), tuple(obj.refs)

    def write_data(self, h, payload: bytes) -> None:
        e = self.resolve(h)
        e.obj.set_data(payload)
        e.dirty = True
        self._log_write(e)

    def write_ref(self, h, index: int, oid: ObjectId) -> None:
        e = self.resolve(h)
        e.obj.set_ref(index, oid)
        e.dirty = True
        self._log_write(e)

    def _log_write(self, e):
        if self.write_log is not None:
            self.write_log[e.oid] = e.obj.copy()

    def work(self, units: float) -> None:
        """Charge local computation to this client's clock."""
        self.now += units

    # -- remote operations ----------------------------------------------------

    def create(self, data_size: int, ref_count: int) -> Handle:
        need = object_nbytes(data_size, ref_count)
        if need > self.capacity:
            raise ConfigurationError(f"object of {need} bytes cannot fit a "
                                     f"{self.capacity}-byte client cache")
        self._sync()
        if self.used_bytes + need > self.capacity:
            self.evict(need)
        server = self._next_create_server
        self._next_create_server = (server + 1) % self.num_servers
        tag = next(self._tags)
        self._post(K.CREATE_REQ, server, data_size=data_size, ref_count=ref_count, tag=tag)
        key = (K.CREATE_REPLY, tag)
        replies = self._replies
        waited = self._block_until(lambda: key in replies, f"CreateReply from server {server}")
        self.metrics.record(self.cell, "create", waited)
        reply = replies.pop(key)
        if not reply.ok:
            raise AllocationError(f"server {server} heap full")
        obj = new_object(data_size, ref_count)
        e = self._install(reply.oid, obj, dirty=True, touched=True)
        self._log_write(e)
        self.counters["creates"] += 1
        self.now += self.cost.local_access_cost
        return Handle(reply.oid, e.slot)

    def flush(self) -> int:
        """Write back every dirty replica; replicas stay resident and clean."""
        self._sync()
        dirty = [e for e in self._slots if e is not None and e.dirty]
        self._write_back(dirty)
        return len(dirty)

    def barrier(self) -> None:
        self.flush()
        self._post(K.BARRIER_ENTER, 0)
        self.counters["barriers"] += 1
        key = (K.BARRIER_RELEASE, None)
        replies = self._replies
        self._block_until(lambda: key in replies, "BarrierRelease")
        del replies[key]

    def drop_clean(self) -> int:
        """Discard every clean replica without write-back (a cold cache restart)."""
        self._sync()
        clean = [e for e in self._slots if e is not None and not e.dirty]
        for e in clean:
            if not e.touched:
                self.counters["untouched_evicted"] += 1
            self._remove(e)
        self.counters["evicted"] += len(clean)
        return len(clean)

    def sem_wait(self, oid: ObjectId) -> None:
        self._sem_exchange(K.SEM_WAIT, K.SEM_GRANT, oid)

    def sem_signal(self, oid: ObjectId) -> None:
        self._sem_exchange(K.SEM_SIGNAL, K.SEM_SIGNAL_ACK, oid)

    def _sem_exchange(self, kind, reply_kind, oid):
        if isinstance(oid, Handle):
            oid = oid.oid
        if oid.server_index < 0:
            raise NilReferenceError("semaphore on nil reference")
        self._sync()
        self._post(kind, oid.server_index, oid=oid)
        self.counters["sem_ops"] += 1
        key = (reply_kind, oid)
        replies = self._replies
        self._block_until(lambda: key in replies, f"{reply_kind} {oid}")
        del replies[key]

    # -- phases ---------------------------------------------------------------

    def begin_phase(self, name: str) -> None:
        self.metrics.begin_phase(self.cell, name, self.now)

    def end_phase(self, name: str) -> None:
        self.metrics.end_phase(self.cell, name, self.now)

    @contextmanager
    def phase(self, name: str):
        self.begin_phase(name)
        yield self
        self.end_phase(name)

    def finalize(self) -> None:
        """Count prefetched replicas never touched that are still resident."""
        residual = sum(1 for e in self._slots if e is not None and not e.touched)
        self.counters["untouched_residual"] += residual
