"""Low-priority prefetch helps one client and hurts a crowd.

Each client builds and traverses its own tree on one shared server. Low
priority serves prefetch tasks only while no real request waits, so it
costs nothing on an idle server. Add clients and the server is never idle:
prefetch tasks pile up behind demand traffic and arrive too late to help,
while still occupying the server.
"""
from sharedheap import ExperimentConfig, run_experiment

base = ExperimentConfig(app="bintree-sort", keys=2000, cache_bytes=48000)
print("clients   none-total   low-d2-total   ratio")
for clients in (1, 2, 3, 4):
    none = run_experiment(base.replace(clients=clients, priority="none"))
    low = run_experiment(base.replace(clients=clients, priority="low", depth=2))
    a, b = none.report.value("total"), low.report.value("total")
    print(f"{clients:7d} {a:12.0f} {b:14.0f} {b / a:7.3f}")
