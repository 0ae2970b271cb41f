"""Binary search tree sort and search over the shared heap.

A node's data part holds its key as a little-endian int64 followed by
padding; its two references are ``[left, right]``. Keys equal to a node's key
go to the right.
"""
from __future__ import annotations

import random
import struct

from ..objects import NIL

KEY = struct.Struct("<q")
LEFT, RIGHT = 0, 1
DEFAULT_NODE_BYTES = 32


def client_rng(seed, client_index: int, stream: str) -> random.Random:
    return random.Random(f"{seed}:{client_index}:{stream}")


def generate_keys(n_keys: int, seed, client_index: int = 0) -> list[int]:
    """The integers ``0 .. n_keys-1`` in a seeded random insertion order."""
    keys = list(range(n_keys))
    client_rng(seed, client_index, "keys").shuffle(keys)
    return keys


def generate_queries(n_keys: int, n_queries: int, seed, client_index: int = 0) -> list[int]:
    """Probes drawn uniformly from ``[0, 2 * n_keys)``, so about half miss."""
    rng = client_rng(seed, client_index, "queries")
    return [rng.randrange(2 * n_keys) for _ in range(n_queries)]


def _new_node(lom, key, node_bytes):
    h = lom.create(node_bytes, 2)
    lom.write_data(h, KEY.pack(key) + bytes(node_bytes - KEY.size))
    return h


def node_key(lom, h) -> int:
    return KEY.unpack_from(lom.read_data(h))[0]


def insert(lom, root, key, node_bytes=DEFAULT_NODE_BYTES):
    """Insert ``key`` under ``root`` (an ObjectId, possibly NIL); returns the root id."""
    if root == NIL:
        return _new_node(lom, key, node_bytes).oid
    cur = lom.handle(root)
    while True:
        side = LEFT if key < node_key(lom, cur) else RIGHT
        nxt = lom.read_ref(cur, side)
        if nxt == NIL:
            child = _new_node(lom, key, node_bytes)
            lom.write_ref(cur, side, child.oid)
            return root
        cur = lom.handle(nxt)


def build_tree(lom, keys, node_bytes=DEFAULT_NODE_BYTES):
    root = NIL
    for key in keys:
        root = insert(lom, root, key, node_bytes)
    return root


def inorder(lom, root) -> list[int]:
    out = []
    stack = []
    cur = root
    while stack or cur != NIL:
        while cur != NIL:
            h = lom.handle(cur)
            stack.append(h)
            cur = lom.read_ref(h, LEFT)
        h = stack.pop()
        out.append(node_key(lom, h))
        cur = lom.read_ref(h, RIGHT)
    return out


def search(lom, root, key) -> bool:
    cur = root
    while cur != NIL:
        h = lom.handle(cur)
        k = node_key(lom, h)
        if k == key:
            return True
        cur = lom.read_ref(h, LEFT if key < k else RIGHT)
    return False


def sort_program(keys, node_bytes=DEFAULT_NODE_BYTES, cold_traversal=False):
    """Client program: insert ``keys``, barrier, then traverse in order.

    With ``cold_traversal`` the client drops its clean replicas after the
    barrier so the traversal starts from an empty cache.
    """
    def program(lom):
        with lom.phase("insert"):
            root = build_tree(lom, keys, node_bytes)
        lom.barrier()
        if cold_traversal:
            lom.drop_clean()
        with lom.phase("traverse"):
            return inorder(lom, root)
    return program


def search_program(keys, queries, node_bytes=DEFAULT_NODE_BYTES, cold_traversal=False):
    def program(lom):
        with lom.phase("insert"):
            root = build_tree(lom, keys, node_bytes)
        lom.barrier()
        if cold_traversal:
            lom.drop_clean()
        with lom.phase("search"):
            return [search(lom, root, q) for q in queries]
    return program
