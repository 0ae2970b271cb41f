"""Client cell: the cache, handles, demand fetch, eviction and write-back."""
import pytest

from sharedheap import SharedHeap
from sharedheap.errors import ConfigurationError, MetricsError, NilReferenceError, UsageError
from sharedheap.experiment import ExperimentConfig, run_experiment
from sharedheap.objects import NIL, new_object, object_nbytes
from sharedheap.transport import CostModel, MessageKind as K

NODE = object_nbytes(8, 2)


def run_one(program, **kw):
    heap = SharedHeap(1, 1, **kw)
    report = heap.run(program)
    return heap, report


def test_create_then_read_needs_no_fetch():
    heap, report = run_one(lambda lom: lom.read_data(lom.create(8, 2)))
    assert heap.results[0] == bytes(8)
    assert K.FETCH_REQ not in heap.sim.sent_by_kind
    assert report.clients[0].counters["demand_fetches"] == 0


def test_six_thousand_creates_stay_resident():
    def program(lom):
        for _ in range(6000):
            lom.create(32, 2)
        return len(lom.resident_ids())
    heap, report = run_one(program, cache_bytes=6000 * object_nbytes(32, 2))
    assert heap.results[0] == 6000
    assert report.value("demand_fetches") == 0
    assert report.value("evicted") == 0


def test_create_into_full_cache_evicts_first():
    def program(lom):
        hs = [lom.create(8, 2) for _ in range(4)]
        return [lom.is_resident(h.oid) for h in hs], lom.used_bytes
    heap, report = run_one(program, cache_bytes=3 * NODE)
    resident, used = heap.results[0]
    assert resident[-1] and not resident[0]
    assert used <= 3 * NODE
    assert report.value("writebacks") >= 1


def test_resident_resolve_sends_nothing():
    def program(lom):
        h = lom.create(8, 2)
        before = sum(lom.sim.sent_by_kind.values())
        for _ in range(10):
            lom.read_data(h)
        return sum(lom.sim.sent_by_kind.values()) - before
    heap, _ = run_one(program)
    assert heap.results[0] == 0


def _cold_fetch(lom):
    h = lom.create(8, 2)
    lom.flush()
    lom.drop_clean()
    start = lom.now
    lom.read_data(h)
    return lom.now - start


def test_cold_resolve_blocks_two_latencies_plus_service():
    heap, report = run_one(_cold_fetch)
    # 2L + S blocked, plus the local access itself
    assert heap.results[0] == 120 + 1
    assert report.clients[0].buckets["fetch"] == 120


def test_depth_two_traversal_needs_fewer_demand_fetches():
    base = ExperimentConfig(app="bintree-sort", keys=600, cold_traversal=True)
    d0 = run_experiment(base).report.value("demand_fetches")
    d2 = run_experiment(base.replace(depth=2)).report.value("demand_fetches")
    assert d2 < d0


def test_write_read_round_trip():
    def program(lom):
        a, b = lom.create(8, 2), lom.create(8, 2)
        lom.write_data(a, b"12345678")
        lom.write_ref(a, 1, b.oid)
        return lom.read_data(a), lom.read_ref(a, 1), lom.read_ref(a, 0), b.oid
    heap, _ = run_one(program)
    data, ref1, ref0, b = heap.results[0]
    assert data == b"12345678" and ref1 == b and ref0 == NIL


def test_access_errors():
    def program(lom):
        h = lom.create(8, 2)
        with pytest.raises(IndexError):
            lom.read_ref(h, 2)
        with pytest.raises(UsageError):
            lom.write_data(h, b"short")
        with pytest.raises(NilReferenceError):
            lom.read_data(NIL)
        with pytest.raises(ConfigurationError):
            lom.create(4096, 0)
        return "ok"
    heap, _ = run_one(program, cache_bytes=1024)
    assert heap.results[0] == "ok"


def test_dirty_eviction_writes_back_before_refetch():
    def program(lom):
        a = lom.create(8, 2)
        lom.write_data(a, b"evicted!")
        for _ in range(8):
            lom.create(8, 2)
        assert not lom.is_resident(a.oid)
        return lom.read_data(a)
    heap, report = run_one(program, cache_bytes=4 * NODE)
    assert heap.results[0] == b"evicted!"
    assert report.value("demand_fetches") == 1


def test_lru_victim_is_least_recent():
    def program(lom):
        a, b, c = (lom.create(8, 2) for _ in range(3))
        lom.flush()
        for h in (a, b, c):
            lom.read_data(h)
        lom.create(8, 2)
        return [lom.is_resident(h.oid) for h in (a, b, c)]
    heap, _ = run_one(program, cache_bytes=3 * NODE, clear_fraction=0.01)
    assert heap.results[0] == [False, True, True]


def test_access_refreshes_lru():
    def program(lom):
        a, b, c = (lom.create(8, 2) for _ in range(3))
        lom.flush()
        lom.read_data(a)
        lom.create(8, 2)
        return [lom.is_resident(h.oid) for h in (a, b, c)]
    heap, _ = run_one(program, cache_bytes=3 * NODE, clear_fraction=0.01)
    assert heap.results[0] == [True, False, True]


def test_batched_eviction_frees_a_quarter():
    def program(lom):
        for _ in range(8):
            lom.create(8, 2)
        lom.flush()
        lom.create(8, 2)
        return lom.used_bytes
    heap, report = run_one(program, cache_bytes=8 * NODE, clear_fraction=0.25)
    assert report.value("evicted") == 2
    assert heap.results[0] == 7 * NODE


def test_evicted_handle_falls_back_to_search():
    def program(lom):
        a = lom.create(8, 2)
        lom.flush()
        lom.read_data(a)
        searches = lom.counters["rot_searches"]
        lom.drop_clean()
        lom.read_data(a)
        lom.read_data(a)
        return lom.counters["rot_searches"] - searches
    heap, _ = run_one(program)
    # one miss search before the fetch; the refreshed slot then hits
    assert heap.results[0] == 1


def test_duplicate_delivery_is_discarded():
    heap = SharedHeap(1, 1)
    lom = heap.clients[0]
    oid = heap.servers[0].handle_create(lom.cell, 8, 2)
    obj = new_object(8, 2)
    assert lom.accept_prefetch_delivery(oid, obj) is not None
    assert lom.accept_prefetch_delivery(oid, obj) is None
    assert lom.counters["duplicates"] == 1
    assert len(lom.resident_ids()) == 1
    assert not lom.entry(oid).touched


def test_delivery_into_full_cache_evicts_lru():
    heap = SharedHeap(1, 1, cache_bytes=2 * NODE, clear_fraction=0.01)
    lom = heap.clients[0]
    srv = heap.servers[0]
    ids = [srv.handle_create(lom.cell, 8, 2) for _ in range(3)]
    for oid in ids:
        lom.accept_prefetch_delivery(oid, new_object(8, 2))
    assert set(lom.resident_ids()) == set(ids[1:])
    assert lom.counters["untouched_evicted"] == 1
    assert lom.used_bytes == 2 * NODE


def test_touched_delivery_is_not_counted():
    def program(lom):
        h = lom.create(8, 2)
        lom.flush()
        lom.drop_clean()
        lom.accept_prefetch_delivery(h.oid, new_object(8, 2))
        lom.read_data(h)
        lom.drop_clean()
        return lom.counters["prefetch_hits"]
    heap, report = run_one(program)
    assert heap.results[0] == 1
    assert report.value("untouched_evicted") == 0


def test_ample_depth_two_traversal_touches_everything():
    cfg = ExperimentConfig(app="bintree-sort", keys=600, depth=2, cold_traversal=True)
    report = run_experiment(cfg).report
    assert report.value("prefetch_received") > 0
    assert report.value("untouched_evicted") == 0
    assert report.value("untouched_residual") == 0


def test_untouched_grows_with_depth_under_pressure():
    base = ExperimentConfig(app="bintree-search", keys=600, queries=300,
                            cold_traversal=True, cache_bytes="constrained")
    counts = [run_experiment(base.replace(depth=d)).report.value("untouched_evicted")
              for d in (0, 3, 5)]
    assert counts[2] > counts[1] > counts[0] == 0


def test_barrier_without_dirty_objects_is_one_round_trip():
    heap, report = run_one(lambda lom: lom.barrier())
    assert dict(heap.sim.sent_by_kind) == {K.BARRIER_ENTER: 1, K.BARRIER_RELEASE: 1}


def test_barrier_flushes_dirty_objects_first():
    import io
    trace = io.StringIO()

    def program(lom):
        hs = [lom.create(8, 2) for _ in range(3)]
        lom.barrier()
        return [lom.entry(h.oid).dirty for h in hs]
    heap = SharedHeap(1, 1, trace=trace)
    heap.run(program)
    assert heap.results[0] == [False] * 3
    sent = [line.split("\t")[1] for line in trace.getvalue().splitlines()
            if line.split("\t")[2] == "1"]
    assert sent[-4:] == ["WriteBack"] * 3 + ["BarrierEnter"]


def test_barrier_makes_writes_visible_to_other_clients():
    shared = {}

    def writer(lom):
        h = lom.create(8, 2)
        shared["oid"] = h.oid
        lom.barrier()
        lom.write_data(h, b"second!!")
        lom.barrier()

    def reader(lom):
        lom.barrier()
        first = lom.read_data(shared["oid"])
        lom.barrier()
        lom.drop_clean()
        return first, lom.read_data(shared["oid"])
    heap = SharedHeap(1, 2)
    heap.run([writer, reader])
    assert heap.results[1] == (bytes(8), b"second!!")


def test_buckets_without_remote_work():
    def program(lom):
        with lom.phase("compute"):
            lom.work(250)
    _, report = run_one(program)
    c = report.clients[0]
    assert c.buckets == {"create": 0, "clear": 0, "fetch": 0, "execute": 250}
    assert c.phases[0]["buckets"]["execute"] == 250


def test_unbalanced_phase_markers():
    def program(lom):
        lom.begin_phase("a")
        lom.end_phase("b")
    with pytest.raises(MetricsError):
        run_one(program)


def test_buckets_partition_total():
    cfg = ExperimentConfig(app="bintree-sort", keys=300, depth=2, cache_bytes=4000)
    for c in run_experiment(cfg).report.clients:
        assert sum(c.buckets.values()) == pytest.approx(c.total)
        assert all(v >= 0 for v in c.buckets.values())


def test_receive_cost_charged_per_delivery():
    def program(lom):
        root = lom.create(8, 2)
        for i in range(2):
            lom.write_ref(root, i, lom.create(8, 2).oid)
        lom.flush()
        lom.drop_clean()
        lom.read_refs(root)
        lom.work(1000)
        return [lom.read_data(r) for r in lom.read_refs(root)]
    fetch = {}
    for rc in (0, 7):
        _, report = run_one(program, depth=1, cost=CostModel(receive_cost=rc))
        assert report.value("prefetch_received") == 2
        assert report.value("demand_fetches") == 1
        fetch[rc] = report.value("fetch")
    assert fetch == {0: 120, 7: 120 + 2 * 7}


def test_clear_cost_charged_per_victim():
    def program(lom):
        for _ in range(8):
            lom.create(8, 2)
        lom.flush()
        lom.create(8, 2)
    _, plain = run_one(program, cache_bytes=8 * NODE)
    _, costly = run_one(program, cache_bytes=8 * NODE, cost=CostModel(clear_cost=5))
    evicted = costly.value("evicted")
    assert costly.value("clear") - plain.value("clear") == 5 * evicted


def test_cache_never_exceeds_capacity_under_prefetch():
    cfg = ExperimentConfig(app="bintree-search", keys=400, queries=200, depth=4,
                           cold_traversal=True, cache_bytes="constrained")
    res = run_experiment(cfg)
    cap = res.report.config["cache_bytes"]
    assert res.report.value("cache_high_water") <= cap
    assert res.oracle_ok
