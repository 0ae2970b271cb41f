"""How far ahead should the server push? A small prefetch-depth sweep.

A client builds a 2000-node binary tree, then traverses it in order with
half the tree fitting in its cache. The server prefetches each fetched
node's descendants to the chosen depth. Shallow prefetching hides round
trips; deep prefetching floods the cache with nodes evicted untouched.
"""
from sharedheap import ExperimentConfig, run_experiment
from sharedheap.metrics import compare

base = ExperimentConfig(app="bintree-sort", keys=2000, cache_bytes=48000)
reports = []
print("depth     total     fetch  demand  received  untouched")
for depth in range(7):
    r = run_experiment(base.replace(depth=depth)).report
    reports.append(r)
    print(f"{depth:5d} {r.value('total'):9.0f} {r.value('fetch'):9.0f} "
          f"{r.value('demand_fetches'):7.0f} {r.value('prefetch_received'):9.0f} "
          f"{r.value('untouched_evicted'):10.0f}")

sweep = compare(reports, "depth")
print(f"\nbest depth: {sweep.argmin}; shape: {sweep.trend}")
