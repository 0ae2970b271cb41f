"""Walk one object through create, write-back, eviction and a demand fetch.

Prints the message trace so each protocol step is visible, then the time
breakdown the client saw. Run with ``python3 demos/01_one_object.py``.
"""
import sys

from sharedheap import SharedHeap


def program(lom):
    h = lom.create(8, 2)                  # CreateReq / CreateReply: 2L + S
    lom.write_data(h, b"hello!!!")        # local only, replica is now dirty
    lom.flush()                           # WriteBack / WriteBackAck
    lom.drop_clean()                      # forget the replica
    return lom.read_data(h)               # FetchReq / FetchReply


print("time\tkind\tsrc\tdst\toid\tdepth")
heap = SharedHeap(num_servers=1, num_clients=1, trace=sys.stdout)
report = heap.run(program)

print()
print("client read back:", heap.results[0])
for bucket, t in report.clients[0].buckets.items():
    print(f"  {bucket:8s} {t:6.0f}")
