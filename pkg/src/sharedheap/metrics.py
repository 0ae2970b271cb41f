"""Run instrumentation: per-client time buckets, counters, and reports.

Client time is split four ways. ``create``, ``clear`` and ``fetch`` hold time
spent blocked on the corresponding remote operation; ``execute`` is whatever
remains of the client's active time, so the four always sum to the total.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

from .errors import MetricsError

BUCKETS = ("create", "clear", "fetch", "execute")
BLOCKING_BUCKETS = ("create", "clear", "fetch")

CLIENT_COUNTERS = (
    "demand_fetches",
    "prefetch_received",
    "duplicates",
    "untouched_evicted",
    "untouched_residual",
    "writebacks",
    "clear_events",
    "evicted",
    "creates",
    "prefetch_hits",
    "late_replies",
    "rot_searches",
    "local_accesses",
    "sem_ops",
    "barriers",
    "cache_high_water",
)

SERVER_COUNTERS = (
    "real_served",
    "prefetch_served",
    "prefetch_enqueued",
    "forwarded",
    "dropped",
    "filtered",
    "faults",
    "queue_high_water",
    "real_queue_high_water",
    "prefetch_queue_high_water",
)

_HIGH_WATER = {"cache_high_water", "queue_high_water", "real_queue_high_water",
               "prefetch_queue_high_water"}


class _ClientState:
    __slots__ = ("buckets", "counters", "phases", "open_phase", "start", "end")

    def __init__(self):
        self.buckets = dict.fromkeys(BLOCKING_BUCKETS, 0.0)
        self.counters = dict.fromkeys(CLIENT_COUNTERS, 0)
        self.phases = []
        self.open_phase = None
        self.start = 0.0
        self.end = None


class Metrics:
    """Mutable collector owned by one run's event loop."""

    def __init__(self, clients, servers):
        self._clients = {c: _ClientState() for c in clients}
        self._servers = {s: dict.fromkeys(SERVER_COUNTERS, 0) for s in servers}

    def record(self, client, bucket, duration):
        if bucket not in BLOCKING_BUCKETS:
            if bucket == "execute":
                raise MetricsError("execute time is derived, not recorded")
            raise MetricsError(f"unknown bucket {bucket!r}")
        st = self._client(client)
        st.buckets[bucket] += duration
        if st.open_phase is not None:
            st.open_phase["buckets"][bucket] += duration

    def count(self, cell, counter, n=1):
        table = self._table(cell, counter)
        table[counter] += n

    def counters_for(self, cell) -> dict:
        """The live counter table of ``cell``, for hot paths that bump counters directly."""
        if cell in self._clients:
            return self._clients[cell].counters
        if cell in self._servers:
            return self._servers[cell]
        raise MetricsError(f"unknown cell {cell}")

    def high_water(self, cell, counter, value):
        table = self._table(cell, counter)
        if value > table[counter]:
            table[counter] = value

    def counter(self, cell, counter):
        return self._table(cell, counter)[counter]

    def bucket(self, client, bucket):
        return self._client(client).buckets[bucket]

    def begin_phase(self, client, name, now):
        st = self._client(client)
        if st.open_phase is not None:
            raise MetricsError(f"phase {name!r} opened inside phase {st.open_phase['name']!r}")
        st.open_phase = {"name": name, "start": now, "end": None,
                         "buckets": dict.fromkeys(BLOCKING_BUCKETS, 0.0)}

    def end_phase(self, client, name, now):
        st = self._client(client)
        ph = st.open_phase
        if ph is None or ph["name"] != name:
            raise MetricsError(f"unbalanced phase marker: closing {name!r}")
        ph["end"] = now
        ph["buckets"]["execute"] = (now - ph["start"]) - sum(ph["buckets"].values())
        st.phases.append(ph)
        st.open_phase = None

    def client_finished(self, client, now):
        st = self._client(client)
        if st.open_phase is not None:
            raise MetricsError(f"client {client} finished inside phase {st.open_phase['name']!r}")
        st.end = now

    def _client(self, client):
        try:
            return self._clients[client]
        except KeyError:
            raise MetricsError(f"unknown client cell {client}") from None

    def _table(self, cell, counter):
        if cell in self._clients:
            table = self._clients[cell].counters
        elif cell in self._servers:
            table = self._servers[cell]
        else:
            raise MetricsError(f"unknown cell {cell}")
        if counter not in table:
            raise MetricsError(f"unknown counter {counter!r} for cell {cell}")
        return table

    def snapshot(self, *, total_time, config=None, seed=None, messages=None, output=None):
        clients = []
        for i, (cell, st) in enumerate(self._clients.items()):
            end = st.end if st.end is not None else total_time
            total = end - st.start
            buckets = {b: st.buckets[b] for b in BLOCKING_BUCKETS}
            buckets["execute"] = total - sum(buckets.values())
            clients.append(ClientReport(
                cell=cell, index=i, total=total,
                buckets={b: buckets[b] for b in BUCKETS},
                counters=dict(st.counters),
                phases=[dict(p, buckets={b: p["buckets"][b] for b in BUCKETS}) for p in st.phases],
            ))
        servers = [ServerReport(cell=s, counters=dict(c)) for s, c in self._servers.items()]
        return MetricsReport(
            config=dict(config or {}), seed=seed, total_time=total_time,
            clients=clients, servers=servers, messages=dict(sorted((str(k), v) for k, v in (messages or {}).items())),
            output=dict(output or {}),
        )


@dataclass
class ClientReport:
    cell: int
    index: int
    total: float
    buckets: dict
    counters: dict
    phases: list = field(default_factory=list)


@dataclass
class ServerReport:
    cell: int
    counters: dict


CSV_CONFIG_COLUMNS = (
    "app", "depth", "priority", "servers", "clients", "cache_bytes",
    "latency", "service_cost", "per_byte_cost", "local_cost",
    "keys", "queries", "particles", "updated", "dt", "seed",
)
CSV_COUNTER_COLUMNS = (
    "demand_fetches", "prefetch_received", "duplicates", "untouched_evicted",
    "untouched_residual", "writebacks", "clear_events",
)
CSV_SERVER_COLUMNS = ("real_served", "prefetch_served", "forwarded", "dropped", "queue_high_water")


@dataclass
class MetricsReport:
    config: dict
    seed: object
    total_time: float
    clients: list
    servers: list
    messages: dict
    output: dict = field(default_factory=dict)

    @property
    def mean_client_total(self) -> float:
        if not self.clients:
            return 0.0
        return sum(c.total for c in self.clients) / len(self.clients)

    def value(self, metric: str) -> float:
        """Scalar view used by sweeps.

        ``total`` and the bucket names are means over clients (per-client
        time); counters are summed over clients, server counters over servers;
        ``run_time`` is the final virtual clock.
        """
        if metric == "total":
            return self.mean_client_total
        if metric == "run_time":
            return self.total_time
        if metric in BUCKETS:
            if not self.clients:
                return 0.0
            return sum(c.buckets[metric] for c in self.clients) / len(self.clients)
        if metric in CLIENT_COUNTERS:
            return sum(c.counters[metric] for c in self.clients)
        if metric in SERVER_COUNTERS:
            return sum(s.counters[metric] for s in self.servers)
        if metric == "messages":
            return sum(self.messages.values())
        raise MetricsError(f"unknown metric {metric!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        cfg = self.config
        row = {k: cfg.get(k, "") for k in CSV_CONFIG_COLUMNS}
        row["seed"] = self.seed
        for b in BUCKETS:
            row[b] = round(self.value(b), 6)
        for c in CSV_COUNTER_COLUMNS:
            row[c] = self.value(c)
        for c in CSV_SERVER_COLUMNS:
            row[c] = self.value(c)
        row["total"] = round(self.mean_client_total, 6)
        row["run_time"] = round(self.total_time, 6)
        return row


CSV_COLUMNS = CSV_CONFIG_COLUMNS + BUCKETS + CSV_COUNTER_COLUMNS + CSV_SERVER_COLUMNS + ("total", "run_time")


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


# -- sweep comparison -------------------------------------------------------

@dataclass
class Comparison:
    param: str
    metric: str
    points: list          # [(param value, metric value)] in sweep order
    relations: list       # [(a, b, "<" | "=" | ">")] for consecutive points
    trend: str

    @property
    def values(self):
        return [v for _, v in self.points]

    @property
    def argmin(self):
        return min(self.points, key=lambda p: p[1])[0]

    def holds(self, a, rel, b) -> bool:
        va, vb = dict(self.points)[a], dict(self.points)[b]
        return {"<": va < vb, "<=": va <= vb, ">": va > vb, ">=": va >= vb, "=": va == vb}[rel]


def _trend(values):
    pairs = list(zip(values, values[1:]))
    if not pairs or all(a == b for a, b in pairs):
        return "equal"
    if all(a < b for a, b in pairs):
        return "increasing"
    if all(a > b for a, b in pairs):
        return "decreasing"
    if all(a <= b for a, b in pairs):
        return "nondecreasing"
    if all(a >= b for a, b in pairs):
        return "nonincreasing"
    return "mixed"


def compare(reports, param, metric="total") -> Comparison:
    """Order a sweep of reports that differ only in ``param``."""
    reports = list(reports)
    if not reports:
        raise MetricsError("nothing to compare")
    base = {k: v for k, v in reports[0].config.items() if k != param}
    for r in reports[1:]:
        other = {k: v for k, v in r.config.items() if k != param}
        if other != base or r.seed != reports[0].seed:
            diff = sorted(k for k in set(base) | set(other) if base.get(k) != other.get(k))
            raise MetricsError(f"reports differ in more than {param!r}: {diff}")
    points = [(r.config.get(param), r.value(metric)) for r in reports]
    relations = []
    for (pa, va), (pb, vb) in zip(points, points[1:]):
        relations.append((pa, pb, "<" if va < vb else ">" if va > vb else "="))
    return Comparison(param, metric, points, relations, _trend([v for _, v in points]))
