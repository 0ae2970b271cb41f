"""Assemble servers and clients on one simulator and run client programs."""
from __future__ import annotations

from .client import LocalObjectManager
from .errors import ConfigurationError
from .metrics import Metrics
from .server import ObjectServer, Priority
from .transport import CostModel, Simulator


class SharedHeap:
    """A complete simulated machine: ``num_servers`` GOM cells and ``num_clients`` LOM cells.

    Servers occupy cells ``0 .. num_servers-1`` and clients the cells after
    them. Each client runs one program, a callable taking its
    :class:`LocalObjectManager`; the program's return value lands in
    :attr:`results`.

    >>> heap = SharedHeap(num_servers=1, num_clients=1)
    >>> def program(lom):
    ...     h = lom.create(8, 2)
    ...     return lom.read_data(h)
    >>> report = heap.run(program)
    >>> heap.results[0]
    b'\\x00\\x00\\x00\\x00\\x00\\x00\\x00\\x00'
    >>> report.clients[0].buckets["create"]
    120.0
    """

    def __init__(self, num_servers=1, num_clients=1, *, cost=None, depth=0,
                 priority=Priority.HIGH, cache_bytes=1 << 20, server_capacity=16 << 20,
                 clear_fraction=0.25, recent_filter=0, record_dispatch=False,
                 record_writes=False, trace=None):
        if num_servers < 1:
            raise ConfigurationError("need at least one server")
        if num_clients < 0:
            raise ConfigurationError("negative client count")
        self.cost = cost or CostModel()
        self.sim = Simulator(self.cost, trace=trace)
        self.num_servers = num_servers
        self.num_clients = num_clients
        server_cells = list(range(num_servers))
        client_cells = [num_servers + i for i in range(num_clients)]
        self.metrics = Metrics(client_cells, server_cells)
        self.write_log = {} if record_writes else None
        self.servers = []
        for cell in server_cells:
            srv = ObjectServer(self.sim, cell, num_servers=num_servers, metrics=self.metrics,
                               policy=priority, depth=depth, capacity_bytes=server_capacity,
                               participants=client_cells, recent_filter=recent_filter,
                               record_dispatch=record_dispatch)
            self.sim.add_cell(cell, srv)
            self.servers.append(srv)
        self.clients = []
        for i, cell in enumerate(client_cells):
            lom = LocalObjectManager(self.sim, cell, i, num_servers=num_servers,
                                     num_clients=num_clients, metrics=self.metrics,
                                     capacity_bytes=cache_bytes, clear_fraction=clear_fraction,
                                     write_log=self.write_log)
            self.sim.add_cell(cell, lom)
            self.clients.append(lom)
        self.results = []
        self.final_time = None

    def master(self, oid):
        """Current master copy of ``oid`` (test and audit helper)."""
        return self.servers[oid.server_index].store[oid]

    def run(self, programs, *, config=None, seed=None, output=None):
        """Run one program per client and return the metrics snapshot.

        ``programs`` is either a single callable shared by every client or a
        sequence with one callable per client.
        """
        if callable(programs):
            programs = [programs] * self.num_clients
        programs = list(programs)
        if len(programs) != self.num_clients:
            raise ConfigurationError(f"{len(programs)} programs for {self.num_clients} clients")
        for lom, prog in zip(self.clients, programs):
            lom.program = prog
            self.sim.spawn(lom)
        self.final_time = self.sim.run()
        for lom in self.clients:
            lom.finalize()
        self.results = [lom.result for lom in self.clients]
        return self.metrics.snapshot(total_time=self.final_time, config=config, seed=seed,
                                     messages=self.sim.sent_by_kind, output=output)
