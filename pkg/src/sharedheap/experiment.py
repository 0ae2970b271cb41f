"""One experiment = one config, one deterministic simulation, one report.

:class:`ExperimentConfig` is the flat parameter set shared by the CLI, the
preset files and the tests. :func:`run_experiment` builds the machine, runs
the chosen application on every client, checks the functional output
against a local oracle and returns everything in an :class:`ExperimentResult`.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import asdict, dataclass, field, fields

from .apps import bintree, octree
from .errors import UsageError
from .server import Priority
from .system import SharedHeap
from .transport import CostModel

APPS = ("bintree-sort", "bintree-search", "octree-nbody")
PRIORITIES = ("high", "low", "none")
CACHE_MODES = ("ample", "constrained")
CONSTRAINED_FRACTION = 8
FORCE_TOLERANCE = 1e-9


@dataclass
class ExperimentConfig:
    app: str = "bintree-sort"
    depth: int = 0
    priority: str = "high"
    servers: int = 1
    clients: int = 1
    #: bytes per client cache, or "ample" / "constrained" (sized from the workload)
    cache_bytes: object = "ample"
    latency: float = 50.0
    service_cost: float = 20.0
    per_byte_cost: float = 0.0
    local_cost: float = 1.0
    receive_cost: float = 0.0
    clear_cost: float = 0.0
    keys: int = 6000
    queries: int = 3000
    particles: int = 1000
    updated: int = 100
    dt: float = octree.DT
    seed: int = 0
    node_bytes: int = bintree.DEFAULT_NODE_BYTES
    cold_traversal: bool = False
    visit_work: float = 0.0
    clear_fraction: float = 0.25
    recent_filter: int = 0
    distribution: str = "clustered"
    server_capacity: int = 64 << 20

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.app not in APPS:
            raise UsageError(f"unknown app {self.app!r}; expected one of {', '.join(APPS)}")
        if self.priority not in PRIORITIES:
            raise UsageError(f"unknown priority {self.priority!r}; expected high, low or none")
        if not isinstance(self.depth, int) or self.depth < 0:
            raise UsageError("depth must be an integer >= 0")
        for name in ("servers", "clients"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if isinstance(self.cache_bytes, str):
            if self.cache_bytes not in CACHE_MODES:
                raise UsageError("cache_bytes must be a byte count, 'ample' or 'constrained'")
        elif self.cache_bytes <= 0:
            raise UsageError("cache_bytes must be positive")
        if self.app.startswith("bintree"):
            if self.keys < 1:
                raise UsageError("keys must be >= 1")
            if self.app == "bintree-search" and self.queries < 0:
                raise UsageError("queries must be >= 0")
        else:
            if self.particles < 1:
                raise UsageError("particles must be >= 1")
            if not 0 <= self.updated <= self.particles:
                raise UsageError("updated must be between 0 and particles")
            if self.clients > max(self.updated, 1):
                raise UsageError("more clients than updated particles")

    @property
    def effective_depth(self) -> int:
        return 0 if self.priority == "none" else self.depth

    def cost_model(self) -> CostModel:
        return CostModel(msg_latency=self.latency, server_service_cost=self.service_cost,
                         per_byte_cost=self.per_byte_cost, local_access_cost=self.local_cost,
                         receive_cost=self.receive_cost, clear_cost=self.clear_cost)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ExperimentConfig":
        return self.from_dict({**self.to_dict(), **changes})


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: object
    output: dict
    oracle_ok: bool
    oracle_detail: str = ""
    results: list = field(default_factory=list, repr=False)


def working_set_bytes(config: ExperimentConfig, positions=None) -> int:
    """Bytes one client needs to hold its whole data structure."""
    if config.app.startswith("bintree"):
        return config.keys * (config.node_bytes + 2 * 8)
    if positions is None:
        _, positions, _ = octree.generate_particles(config.particles, config.seed,
                                                    config.distribution)
    nodes = octree.count_nodes(positions)
    return (nodes * (octree.NODE_BYTES + 8 * 8)
            + config.particles * (octree.PARTICLE_BYTES + 2 * 8) + 2 * 8)


def resolve_cache_bytes(config: ExperimentConfig, positions=None) -> int:
    mode = config.cache_bytes
    if not isinstance(mode, str):
        return int(mode)
    full = working_set_bytes(config, positions)
    return full if mode == "ample" else full // CONSTRAINED_FRACTION


def _digest(parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.hexdigest()


def _bintree_programs(config):
    keys = [bintree.generate_keys(config.keys, config.seed, i) for i in range(config.clients)]
    if config.app == "bintree-sort":
        progs = [bintree.sort_program(k, config.node_bytes, config.cold_traversal) for k in keys]
        return progs, {"keys": keys}
    queries = [bintree.generate_queries(config.keys, config.queries, config.seed, i)
               for i in range(config.clients)]
    progs = [bintree.search_program(k, q, config.node_bytes, config.cold_traversal)
             for k, q in zip(keys, queries)]
    return progs, {"keys": keys, "queries": queries}


def _check_sort(results, data):
    bad = [i for i, (got, keys) in enumerate(zip(results, data["keys"])) if got != sorted(keys)]
    digest = _digest(",".join(map(str, r)).encode() + b";" for r in results)
    detail = "sorted output matches" if not bad else f"clients {bad} produced unsorted output"
    return {"sorted_digest": digest, "keys_out": sum(len(r) for r in results)}, not bad, detail


def _check_search(results, data):
    bad = []
    for i, (got, keys, queries) in enumerate(zip(results, data["keys"], data["queries"])):
        present = set(keys)
        if got != [q in present for q in queries]:
            bad.append(i)
    hits = sum(sum(r) for r in results)
    detail = "hit vector matches" if not bad else f"clients {bad} returned wrong hits"
    return {"hits": hits, "queries": sum(len(r) for r in results)}, not bad, detail


def _octree_setup(config):
    mass, pos, vel = octree.generate_particles(config.particles, config.seed, config.distribution)
    ranges = octree.partition(config.updated, config.clients)
    octree.check_partition(ranges, config.updated)
    prog = octree.nbody_program(mass, pos, vel, ranges, dt=config.dt,
                                visit_work=config.visit_work)
    return prog, {"mass": mass, "pos": pos, "vel": vel}


def _state_bytes(states):
    pack = struct.Struct("<7d").pack
    return b"".join(pack(m, *p, *v) for m, p, v in states)


def _check_octree(heap, results, data, config):
    mass, pos, vel = data["mass"], data["pos"], data["vel"]
    merged = {}
    for r in results:
        merged.update(r or {})
    states = octree.read_particles(heap, config.particles)
    problems = []
    if sorted(merged) != list(range(config.updated)):
        problems.append("updated set does not match")
    idx = sorted(merged)
    ref = octree.direct_forces(mass, pos, idx)
    worst = 0.0
    for row, i in enumerate(idx):
        f = merged[i][0]
        scale = math.sqrt(sum(x * x for x in ref[row]))
        err = math.sqrt(sum((f[k] - ref[row][k]) ** 2 for k in range(3)))
        err = err / scale if scale > 0 else err
        worst = max(worst, err)
        if states[i] != (merged[i][1], merged[i][2], merged[i][3]):
            problems.append(f"particle {i} state on the heap differs from its update")
    if worst > FORCE_TOLERANCE:
        problems.append(f"force error {worst:.3g} exceeds {FORCE_TOLERANCE:g}")
    for i in range(config.updated, config.particles):
        if states[i] != (float(mass[i]), tuple(map(float, pos[i])), tuple(map(float, vel[i]))):
            problems.append(f"particle {i} changed but was not updated")
            break
    output = {"particle_checksum": _digest([_state_bytes(states)]),
              "updated": len(idx), "max_force_error": worst}
    detail = "; ".join(problems) if problems else f"forces match within {FORCE_TOLERANCE:g}"
    return output, not problems, detail


def build_heap(config: ExperimentConfig, cache_bytes: int, **kwargs) -> SharedHeap:
    return SharedHeap(config.servers, config.clients, cost=config.cost_model(),
                      depth=config.effective_depth, priority=Priority(config.priority),
                      cache_bytes=cache_bytes, server_capacity=config.server_capacity,
                      clear_fraction=config.clear_fraction, recent_filter=config.recent_filter,
                      **kwargs)


def run_experiment(config: ExperimentConfig, *, trace=None, **heap_options) -> ExperimentResult:
    """Run ``config`` once and check its functional output."""
    if config.app.startswith("bintree"):
        programs, data = _bintree_programs(config)
        positions = None
    else:
        programs, data = _octree_setup(config)
        positions = data["pos"]
    cache = resolve_cache_bytes(config, positions)
    heap = build_heap(config, cache, trace=trace, **heap_options)
    echo = config.to_dict()
    echo["cache_mode"] = config.cache_bytes if isinstance(config.cache_bytes, str) else "bytes"
    echo["cache_bytes"] = cache
    heap.run(programs)
    if config.app == "bintree-sort":
        output, ok, detail = _check_sort(heap.results, data)
    elif config.app == "bintree-search":
        output, ok, detail = _check_search(heap.results, data)
    else:
        output, ok, detail = _check_octree(heap, heap.results, data, config)
    output["oracle"] = "pass" if ok else "fail"
    report = heap.metrics.snapshot(total_time=heap.final_time, config=echo, seed=config.seed,
                                   messages=heap.sim.sent_by_kind, output=output)
    return ExperimentResult(config, report, output, ok, detail, heap.results)
