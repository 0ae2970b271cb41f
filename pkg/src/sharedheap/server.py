"""Server-side object manager: master store, scheduling, prefetch, sync.

Each server cell handles one request at a time. A request occupies the
server for ``server_service_cost``; whatever arrives meanwhile waits in the
scheduler. Serving a demand fetch may seed a transitive prefetch expansion
that pushes the fetched object's descendants to the requesting client.
"""
from __future__ import annotations

import enum
from collections import OrderedDict, deque
from dataclasses import dataclass

from .errors import ConfigurationError, ProtocolFault
from .objects import MAX_DATA_BYTES, MAX_REFS, ObjectId, new_object, object_nbytes
from .transport import Message, MessageKind as K


class Priority(str, enum.Enum):
    HIGH = "high"
    LOW = "low"
    NONE = "none"

    def __str__(self):
        return self.value


@dataclass(slots=True)
class PrefetchTask:
    target: ObjectId
    client: int
    remaining_depth: int
    expansion: tuple


class RequestScheduler:
    """Orders real requests and prefetch tasks for one server.

    HIGH shares one FIFO between both kinds. LOW keeps two FIFOs and takes a
    prefetch task only when no real request is waiting. NONE never holds
    prefetch tasks.
    """

    def __init__(self, policy: Priority):
        self.policy = Priority(policy)
        self._merged = deque()
        self.real_queue = deque()
        self.prefetch_queue = deque()
        self.real_waiting = 0

    def push_real(self, req) -> None:
        self.real_waiting += 1
        if self.policy is Priority.HIGH:
            self._merged.append((False, req))
        else:
            self.real_queue.append(req)

    def push_prefetch(self, task: PrefetchTask) -> None:
        if self.policy is Priority.NONE:
            raise ConfigurationError("prefetch task queued under NONE policy")
        if self.policy is Priority.HIGH:
            self._merged.append((True, task))
        else:
            self.prefetch_queue.append(task)

    def next_request(self):
        """Return ``(is_prefetch, item)`` or ``None`` when idle."""
        if self.policy is Priority.HIGH:
            if not self._merged:
                return None
            is_prefetch, item = self._merged.popleft()
        elif self.real_queue:
            is_prefetch, item = False, self.real_queue.popleft()
        elif self.prefetch_queue:
            is_prefetch, item = True, self.prefetch_queue.popleft()
        else:
            return None
        if not is_prefetch:
            self.real_waiting -= 1
        return is_prefetch, item

    def __len__(self):
        return len(self._merged) + len(self.real_queue) + len(self.prefetch_queue)

    @property
    def prefetch_waiting(self) -> int:
        return len(self) - self.real_waiting


class ObjectServer:
    """One server cell of the global object manager."""

    def __init__(self, sim, cell, *, num_servers, metrics, policy=Priority.HIGH,
                 depth=0, capacity_bytes=16 * 1024 * 1024, participants=(),
                 recent_filter=0, record_dispatch=False,
                 max_data=MAX_DATA_BYTES, max_refs=MAX_REFS):
        if depth < 0:
            raise ConfigurationError("prefetch depth must be >= 0")
        self.sim = sim
        self.cell = cell
        self.index = cell
        self.num_servers = num_servers
        self.metrics = metrics
        self.policy = Priority(policy)
        self.depth = 0 if self.policy is Priority.NONE else depth
        self.capacity_bytes = capacity_bytes
        self.max_data = max_data
        self.max_refs = max_refs
        self.store = {}
        self.next_serial = 0
        self.used_bytes = 0
        self.scheduler = RequestScheduler(self.policy)
        self.busy = False
        self.dispatch_log = [] if record_dispatch else None

        self.semaphores = {}
        self.participants = frozenset(participants)
        self.arrived = set()
        self.barrier_generation = 0

        self._expansions = {}
        self._expansion_seq = 0
        self._recent_size = recent_filter
        self._recent = {}

    # -- arrivals -----------------------------------------------------------

    def receive(self, msg: Message) -> None:
        if msg.kind is K.PREFETCH_TASK_FORWARD:
            self._admit(PrefetchTask(msg.oid, msg.client, msg.depth, msg.expansion))
        else:
            self.scheduler.push_real(msg)
        self.metrics.high_water(self.cell, "queue_high_water", len(self.scheduler))
        self.metrics.high_water(self.cell, "real_queue_high_water", self.scheduler.real_waiting)
        self.metrics.high_water(self.cell, "prefetch_queue_high_water",
                                self.scheduler.prefetch_waiting)
        if not self.busy:
            self._dispatch()

    def _dispatch(self):
        nxt = self.scheduler.next_request()
        if nxt is None:
            self.busy = False
            return
        is_prefetch, item = nxt
        if self.dispatch_log is not None:
            # real_waiting already excludes the popped item
            self.dispatch_log.append((self.sim.now, "prefetch" if is_prefetch else "real",
                                      self.scheduler.real_waiting))
        self.busy = True
        done = self.sim.now + self.sim.cost.server_service_cost
        self.sim.schedule(done, self._complete, is_prefetch, item)

    def _complete(self, is_prefetch, item):
        if is_prefetch:
            self.serve_prefetch_task(item)
        else:
            self._handle(item)
        self._dispatch()

    def _send(self, kind, dst, **fields):
        self.sim.post(Message(kind, self.cell, dst, **fields))

    def _handle(self, msg: Message):
        kind = msg.kind
        self.metrics.count(self.cell, "real_served")
        if kind is K.FETCH_REQ:
            self.handle_fetch(msg.src, msg.oid)
        elif kind is K.CREATE_REQ:
            self.handle_create(msg.src, msg.data_size, msg.ref_count, msg.tag)
        elif kind is K.WRITE_BACK:
            self.handle_writeback(msg.src, msg.oid, msg.obj)
        elif kind is K.SEM_WAIT:
            self.handle_sem_wait(msg.src, msg.oid)
        elif kind is K.SEM_SIGNAL:
            self.handle_sem_signal(msg.src, msg.oid)
        elif kind is K.BARRIER_ENTER:
            self.handle_barrier(msg.src)
        else:
            raise ProtocolFault(f"server {self.cell} cannot handle {kind}")

    # -- object operations ---------------------------------------------------

    def _master(self, oid):
        if oid.server_index != self.index:
            raise ProtocolFault(f"server {self.cell} asked for {oid}, owned by {oid.server_index}")
        try:
            return self.store[oid]
        except KeyError:
            raise ProtocolFault(f"server {self.cell}: unknown object {oid}") from None

    def handle_create(self, client, data_size, ref_count, tag=None):
        nbytes = object_nbytes(data_size, ref_count)
        fits = (data_size <= self.max_data and ref_count <= self.max_refs
                and self.used_bytes + nbytes <= self.capacity_bytes)
        if not fits:
            self._send(K.CREATE_REPLY, client, ok=False, data_size=data_size,
                       ref_count=ref_count, tag=tag)
            return None
        oid = ObjectId(self.index, self.next_serial)
        self.next_serial += 1
        self.store[oid] = new_object(data_size, ref_count, self.max_data, self.max_refs)
        self.used_bytes += nbytes
        self._send(K.CREATE_REPLY, client, oid=oid, data_size=data_size,
                   ref_count=ref_count, tag=tag)
        return oid

    def handle_fetch(self, client, oid):
        master = self._master(oid)
        self._send(K.FETCH_REPLY, client, oid=oid, obj=master.copy())
        self._note_sent(client, oid)
        if self.depth > 0:
            self._expansion_seq += 1
            expansion = (self.index, self._expansion_seq)
            self._expansions[expansion] = [{oid}, 0]
            self._spawn_children(master, client, self.depth - 1, expansion)
            self._collect(expansion)

    def serve_prefetch_task(self, task: PrefetchTask):
        try:
            master = self.store[task.target]
        except KeyError:
            self.metrics.count(self.cell, "dropped")
            self.metrics.count(self.cell, "faults")
            self._release(task.expansion)
            return
        self.metrics.count(self.cell, "prefetch_served")
        self._send(K.PREFETCH_DELIVERY, task.client, oid=task.target, obj=master.copy(),
                   depth=task.remaining_depth)
        self._note_sent(task.client, task.target)
        if task.remaining_depth > 0:
            self._spawn_children(master, task.client, task.remaining_depth - 1, task.expansion)
        self._release(task.expansion)

    def _spawn_children(self, obj, client, remaining, expansion):
        visited = self._visited(expansion)
        for ref in obj.refs:
            if ref.server_index < 0 or ref in visited:
                continue
            visited.add(ref)
            if self._recently_sent(client, ref):
                self.metrics.count(self.cell, "filtered")
                continue
            owner = ref.server_index
            if owner == self.index:
                self._enqueue_prefetch(PrefetchTask(ref, client, remaining, expansion))
            else:
                self.metrics.count(self.cell, "forwarded")
                self._send(K.PREFETCH_TASK_FORWARD, owner, oid=ref, client=client,
                           depth=remaining, expansion=expansion)

    def _admit(self, task):
        """Queue a task forwarded from another server unless already seen."""
        visited = self._visited(task.expansion)
        if task.target not in visited:
            visited.add(task.target)
            if self._recently_sent(task.client, task.target):
                self.metrics.count(self.cell, "filtered")
            else:
                self._enqueue_prefetch(task)
        self._collect(task.expansion)

    def _enqueue_prefetch(self, task):
        self.metrics.count(self.cell, "prefetch_enqueued")
        self._expansions[task.expansion][1] += 1
        self.scheduler.push_prefetch(task)

    def _visited(self, expansion):
        entry = self._expansions.get(expansion)
        if entry is None:
            entry = self._expansions[expansion] = [set(), 0]
        return entry[0]

    def _release(self, expansion):
        self._expansions[expansion][1] -= 1
        self._collect(expansion)

    def _collect(self, expansion):
        # visited sets live only while the expansion has queued tasks here
        entry = self._expansions.get(expansion)
        if entry is not None and entry[1] == 0:
            del self._expansions[expansion]

    def _note_sent(self, client, oid):
        if not self._recent_size:
            return
        recent = self._recent.setdefault(client, OrderedDict())
        recent[oid] = None
        recent.move_to_end(oid)
        if len(recent) > self._recent_size:
            recent.popitem(last=False)

    def _recently_sent(self, client, oid):
        if not self._recent_size:
            return False
        recent = self._recent.get(client)
        return recent is not None and oid in recent

    def handle_writeback(self, client, oid, obj):
        master = self._master(oid)
        if obj.data_size != master.data_size or obj.ref_count != master.ref_count:
            raise ProtocolFault(f"write-back of {oid} changes its shape")
        self.store[oid] = obj.copy()
        self._send(K.WRITE_BACK_ACK, client, oid=oid)

    # -- synchronisation -----------------------------------------------------

    def handle_sem_wait(self, client, oid):
        self._master(oid)
        holder, waiters = self.semaphores.setdefault(oid, [None, deque()])
        if holder is None:
            self.semaphores[oid][0] = client
            self._send(K.SEM_GRANT, client, oid=oid)
        elif holder == client or client in waiters:
            raise ProtocolFault(f"client {client} waits twice on semaphore {oid}")
        else:
            waiters.append(client)

    def handle_sem_signal(self, client, oid):
        self._master(oid)
        state = self.semaphores.get(oid)
        if state is None or state[0] != client:
            raise ProtocolFault(f"client {client} signals semaphore {oid} it does not hold")
        self._send(K.SEM_SIGNAL_ACK, client, oid=oid)
        waiters = state[1]
        if waiters:
            state[0] = waiters.popleft()
            self._send(K.SEM_GRANT, state[0], oid=oid)
        else:
            state[0] = None

    def semaphore_holder(self, oid):
        state = self.semaphores.get(oid)
        return None if state is None else state[0]

    def handle_barrier(self, client):
        if self.index != 0:
            raise ProtocolFault(f"barrier entered at server {self.cell}; coordinator is server 0")
        if client not in self.participants:
            raise ProtocolFault(f"client {client} is not a barrier participant")
        if client in self.arrived:
            raise ProtocolFault(f"client {client} entered the barrier twice")
        self.arrived.add(client)
        if self.arrived == self.participants:
            self.barrier_generation += 1
            for c in sorted(self.participants):
                self._send(K.BARRIER_RELEASE, c, tag=self.barrier_generation)
            self.arrived.clear()
