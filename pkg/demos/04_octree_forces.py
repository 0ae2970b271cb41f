"""Oct-tree N-body step on the shared heap, checked against a direct sum.

Client 0 builds the tree and particle list; after a barrier, two clients
each update half of the first 40 particles by a full-tree traversal. The
run's oracle compares every computed force with a brute-force pairwise sum.
"""
from sharedheap import ExperimentConfig, run_experiment

cfg = ExperimentConfig(app="octree-nbody", particles=300, updated=40, clients=2, depth=1)
res = run_experiment(cfg)
print("oracle:", res.output["oracle"], "-", res.oracle_detail)
print(f"max relative force error: {res.output['max_force_error']:.2e}")
print("final state checksum:", res.output["particle_checksum"][:16])
for c in res.report.clients:
    print(f"client {c.index}: total {c.total:.0f}, demand fetches {c.counters['demand_fetches']}, "
          f"prefetched {c.counters['prefetch_received']}")
