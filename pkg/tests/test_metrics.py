"""Metrics collection, reports and sweep comparison."""
import csv
import io
import json

import pytest

from sharedheap import SharedHeap
from sharedheap.errors import MetricsError
from sharedheap.experiment import ExperimentConfig, run_experiment
from sharedheap.metrics import (BUCKETS, CSV_COLUMNS, Metrics, compare, reports_to_csv,
                                reports_to_json)


def test_unknown_bucket_and_counter():
    m = Metrics([1], [0])
    with pytest.raises(MetricsError):
        m.record(1, "sleep", 5)
    with pytest.raises(MetricsError):
        m.record(1, "execute", 5)
    with pytest.raises(MetricsError):
        m.count(1, "bogus")
    with pytest.raises(MetricsError):
        m.count(7, "demand_fetches")
    with pytest.raises(MetricsError):
        m.count(0, "demand_fetches")


def test_high_water_keeps_maximum():
    m = Metrics([1], [0])
    for v in (3, 9, 4):
        m.high_water(0, "queue_high_water", v)
    assert m.counter(0, "queue_high_water") == 9


def test_snapshot_partitions_time():
    m = Metrics([1], [0])
    m.record(1, "fetch", 30)
    m.record(1, "create", 20)
    m.client_finished(1, 100)
    c = m.snapshot(total_time=100).clients[0]
    assert list(c.buckets) == list(BUCKETS)
    assert c.buckets == {"create": 20, "clear": 0, "fetch": 30, "execute": 50}
    assert sum(c.buckets.values()) == c.total == 100


def test_phases_get_their_own_buckets():
    m = Metrics([1], [0])
    m.begin_phase(1, "a", 0)
    m.record(1, "fetch", 10)
    m.end_phase(1, "a", 25)
    m.record(1, "fetch", 5)
    m.client_finished(1, 40)
    c = m.snapshot(total_time=40).clients[0]
    assert c.phases[0]["buckets"] == {"create": 0, "clear": 0, "fetch": 10, "execute": 15}
    assert c.buckets["fetch"] == 15


def test_phase_errors():
    m = Metrics([1], [0])
    m.begin_phase(1, "a", 0)
    with pytest.raises(MetricsError):
        m.begin_phase(1, "b", 1)
    with pytest.raises(MetricsError):
        m.client_finished(1, 2)
    with pytest.raises(MetricsError):
        m.end_phase(1, "b", 2)


def test_one_cold_fetch_is_120():
    def program(lom):
        h = lom.create(8, 2)
        lom.flush()
        lom.drop_clean()
        lom.read_data(h)
    report = SharedHeap(1, 1).run(program)
    assert report.value("fetch") == 120
    assert report.value("create") == 120
    assert report.value("clear") == 120


def test_no_remote_work_no_fetch_time():
    report = SharedHeap(1, 1).run(lambda lom: lom.work(10))
    assert report.value("fetch") == 0
    assert report.value("execute") == report.value("total") == 10


def test_value_views():
    res = run_experiment(ExperimentConfig(app="bintree-sort", keys=200, clients=2, depth=1))
    r = res.report
    assert r.value("total") == pytest.approx(sum(c.total for c in r.clients) / 2)
    assert r.value("demand_fetches") == sum(c.counters["demand_fetches"] for c in r.clients)
    assert r.value("messages") == sum(r.messages.values())
    assert r.value("run_time") == r.total_time
    with pytest.raises(MetricsError):
        r.value("nonsense")


def test_depth_zero_counters():
    r = run_experiment(ExperimentConfig(app="bintree-sort", keys=300, cold_traversal=True)).report
    assert r.value("prefetch_received") == 0
    assert r.value("untouched_evicted") == r.value("untouched_residual") == 0


def test_untouched_bounded_by_useful_deliveries():
    cfg = ExperimentConfig(app="bintree-search", keys=400, queries=200, depth=4,
                           cold_traversal=True, cache_bytes="constrained")
    r = run_experiment(cfg).report
    untouched = r.value("untouched_evicted") + r.value("untouched_residual")
    assert 0 < untouched <= r.value("prefetch_received") - r.value("duplicates")


def test_csv_and_json_round_trip():
    reports = [run_experiment(ExperimentConfig(app="bintree-sort", keys=100, depth=d)).report
               for d in (0, 1)]
    rows = list(csv.DictReader(io.StringIO(reports_to_csv(reports))))
    assert len(rows) == 2
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [int(r["depth"]) for r in rows] == [0, 1]
    assert float(rows[1]["total"]) == pytest.approx(reports[1].value("total"))
    doc = json.loads(reports_to_json(reports))
    assert doc[0]["config"]["app"] == "bintree-sort"
    assert set(doc[0]["clients"][0]["buckets"]) == set(BUCKETS)


def test_compare_orders_a_sweep():
    base = ExperimentConfig(app="bintree-sort", keys=300, cache_bytes=7200)
    reports = [run_experiment(base.replace(depth=d)).report for d in (0, 1, 2)]
    cmp = compare(reports, "depth")
    assert cmp.param == "depth" and len(cmp.points) == 3
    assert [p for p, _ in cmp.points] == [0, 1, 2]
    assert cmp.holds(2, "<", 0) == (cmp.values[2] < cmp.values[0])
    assert cmp.argmin in (0, 1, 2)


def test_compare_identical_is_equal():
    r = run_experiment(ExperimentConfig(app="bintree-sort", keys=50)).report
    assert compare([r, r, r], "depth").trend == "equal"


def test_compare_rejects_mixed_configs():
    a = run_experiment(ExperimentConfig(app="bintree-sort", keys=50)).report
    b = run_experiment(ExperimentConfig(app="bintree-sort", keys=60, depth=1)).report
    with pytest.raises(MetricsError, match="keys"):
        compare([a, b], "depth")
    with pytest.raises(MetricsError):
        compare([], "depth")
