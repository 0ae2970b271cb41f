"""Oct-tree N-body force calculation over the shared heap.

Every internal node owns eight child nodes, one per octant; octants holding
no particle are zero-mass nodes rather than nil references. Node data is
eight little-endian doubles: mass, centre of mass (x, y, z), cube origin
(x, y, z) and cube half-width. A node is internal when its first reference
is set; otherwise it is a leaf (mass > 0) or empty (mass == 0).

Particles form a linked list of heap objects whose data is mass, position
and velocity and whose references are ``[next, leaf]``.

The force pass walks the whole tree for every particle and sums pairwise
contributions at the leaves; the aggregates at internal nodes are built but
never used as an approximation.
"""
from __future__ import annotations

import math
import struct

import numpy as np

from ..errors import ConfigurationError, SharedHeapError
from ..objects import NIL, make_object_id

NODE = struct.Struct("<8d")
PARTICLE = struct.Struct("<7d")
NODE_BYTES = 64
PARTICLE_BYTES = 64
NEXT, LEAF = 0, 1
MAX_DEPTH = 20

G = 1.0
DT = 0.01
SOFTENING = 0.05

#: The anchor is client 0's first allocation, so its id is known to everyone.
ANCHOR = make_object_id(0, 0)


class CoincidentParticles(SharedHeapError):
    pass


def generate_particles(n, seed, distribution="clustered", n_clusters=50, spread=0.01):
    """Masses in [0.5, 1.5), positions in the unit cube, small random velocities.

    ``clustered`` draws positions around ``n_clusters`` random centres with
    standard deviation ``spread``; ``uniform`` fills the cube evenly.
    """
    rng = np.random.default_rng(seed)
    mass = rng.uniform(0.5, 1.5, n)
    if distribution == "uniform":
        pos = rng.random((n, 3))
    elif distribution == "clustered":
        centres = rng.uniform(0.1, 0.9, (n_clusters, 3))
        pos = centres[rng.integers(0, n_clusters, n)] + rng.normal(0.0, spread, (n, 3))
    else:
        raise ConfigurationError(f"unknown particle distribution {distribution!r}")
    pos = np.clip(pos, 0.0, np.nextafter(1.0, 0.0))
    vel = rng.normal(0.0, 0.01, (n, 3))
    return mass, pos, vel


def _pack_particle(m, p, v):
    return PARTICLE.pack(m, *p, *v) + bytes(PARTICLE_BYTES - PARTICLE.size)


def _unpack_particle(data):
    vals = PARTICLE.unpack_from(data)
    return vals[0], vals[1:4], vals[4:7]


def _octant(pos, origin, half):
    return ((pos[0] >= origin[0] + half)
            | (pos[1] >= origin[1] + half) << 1
            | (pos[2] >= origin[2] + half) << 2)


def _new_node(lom, origin, half, mass=0.0, com=(0.0, 0.0, 0.0), work=0.0):
    h = lom.create(NODE_BYTES, 8)
    lom.write_data(h, NODE.pack(mass, *com, *origin, half))
    lom.work(work)
    return h


def build(lom, mass, pos, vel, *, max_depth=MAX_DEPTH, visit_work=0.0):
    """Build the particle list and the oct-tree; returns ``(root, head)`` ids.

    Meant for a single builder client. Particles are inserted one at a time,
    splitting leaves until each particle sits alone; mass aggregates are
    filled in by a post-order pass at the end.
    """
    anchor = lom.create(0, 2)
    if anchor.oid != ANCHOR:
        raise ConfigurationError("the oct-tree builder must be client 0 with a fresh heap")

    particles = []
    prev = None
    for i in range(len(mass)):
        h = lom.create(PARTICLE_BYTES, 2)
        lom.write_data(h, _pack_particle(mass[i], pos[i], vel[i]))
        if prev is not None:
            lom.write_ref(prev, NEXT, h.oid)
        particles.append(h.oid)
        prev = h
    head = particles[0] if particles else NIL

    root = _new_node(lom, (0.0, 0.0, 0.0), 0.5).oid
    owner = {}  # leaf id -> particle index; builder-local bookkeeping
    for i in range(len(mass)):
        p = tuple(float(x) for x in pos[i])
        node, depth = root, 0
        while True:
            data = NODE.unpack(lom.read_data(node))
            first = lom.read_ref(node, 0)
            lom.work(visit_work)
            origin, half = data[4:7], data[7]
            if first != NIL:
                node = lom.read_ref(node, _octant(p, origin, half))
                depth += 1
                continue
            if data[0] == 0.0:
                lom.write_data(node, NODE.pack(float(mass[i]), *p, *origin, half))
                lom.write_ref(particles[i], LEAF, node)
                owner[node] = i
                break
            if depth >= max_depth:
                raise CoincidentParticles(f"particle {i} coincides with particle {owner[node]} "
                                          f"beyond depth {max_depth}")
            # split the leaf: its particle moves down one level
            j = owner.pop(node)
            q = tuple(float(x) for x in pos[j])
            children = []
            for octant in range(8):
                sub = tuple(origin[k] + half * ((octant >> k) & 1) for k in range(3))
                children.append(_new_node(lom, sub, half / 2).oid)
            moved = children[_octant(q, origin, half)]
            lom.write_data(moved, NODE.pack(float(mass[j]), *q,
                                            *_child_origin(origin, half, q), half / 2))
            lom.write_ref(particles[j], LEAF, moved)
            owner[moved] = j
            lom.write_data(node, NODE.pack(0.0, 0.0, 0.0, 0.0, *origin, half))
            for octant, child in enumerate(children):
                lom.write_ref(node, octant, child)
            # loop again at the same node, now internal

    _aggregate(lom, root)
    lom.write_ref(anchor, 0, root)
    lom.write_ref(anchor, 1, head)
    return root, head


def _child_origin(origin, half, p):
    return tuple(origin[k] + half * (p[k] >= origin[k] + half) for k in range(3))


def _aggregate(lom, root):
    """Post-order pass: each internal node gets total mass and centre of mass."""
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        refs = lom.read_refs(node)
        if refs[0] == NIL:
            continue
        if not expanded:
            stack.append((node, True))
            stack.extend((c, False) for c in refs)
            continue
        total = 0.0
        mx = my = mz = 0.0
        for c in refs:
            m, cx, cy, cz = NODE.unpack(lom.read_data(c))[:4]
            total += m
            mx += m * cx
            my += m * cy
            mz += m * cz
        data = NODE.unpack(lom.read_data(node))
        com = (mx / total, my / total, mz / total) if total > 0 else (0.0, 0.0, 0.0)
        lom.write_data(node, NODE.pack(total, *com, *data[4:8]))


def count_nodes(pos, max_depth=MAX_DEPTH):
    """Node count of the tree :func:`build` would make, computed locally."""
    pts = [tuple(float(x) for x in p) for p in pos]
    if not pts:
        return 0
    total = 0
    stack = [(pts, (0.0, 0.0, 0.0), 0.5, 0)]
    while stack:
        group, origin, half, depth = stack.pop()
        total += 1
        if len(group) <= 1:
            continue
        if depth >= max_depth:
            raise CoincidentParticles(f"{len(group)} particles coincide beyond depth {max_depth}")
        octants = [[] for _ in range(8)]
        for p in group:
            octants[_octant(p, origin, half)].append(p)
        for octant, sub in enumerate(octants):
            child = tuple(origin[k] + half * ((octant >> k) & 1) for k in range(3))
            stack.append((sub, child, half / 2, depth + 1))
    return total


def tree_stats(lom, root):
    """Counts of internal, leaf and empty nodes reachable from ``root``."""
    counts = {"internal": 0, "leaf": 0, "empty": 0}
    stack = [root]
    while stack:
        node = stack.pop()
        refs = lom.read_refs(node)
        if refs[0] != NIL:
            counts["internal"] += 1
            stack.extend(refs)
        elif NODE.unpack(lom.read_data(node))[0] > 0:
            counts["leaf"] += 1
        else:
            counts["empty"] += 1
    counts["nodes"] = sum(counts.values())
    return counts


def octree_force(lom, root, pos, mass, own_leaf, *, g=G, eps=SOFTENING, visit_work=0.0):
    """Force on a particle by full depth-first traversal, summing at leaves only."""
    px, py, pz = pos
    eps2 = eps * eps
    fx = fy = fz = 0.0
    stack = [root]
    while stack:
        node = stack.pop()
        data, refs = lom.read_object(node)
        if visit_work:
            lom.work(visit_work)
        if refs[0] != NIL:
            stack.extend(reversed(refs))
            continue
        m, cx, cy, cz = NODE.unpack_from(data)[:4]
        if m == 0.0 or node == own_leaf:
            continue
        dx, dy, dz = cx - px, cy - py, cz - pz
        r2 = dx * dx + dy * dy + dz * dz + eps2
        s = g * mass * m / (r2 * math.sqrt(r2))
        fx += s * dx
        fy += s * dy
        fz += s * dz
    return fx, fy, fz


def direct_forces(mass, pos, indices, *, g=G, eps=SOFTENING):
    """Brute-force pairwise sum for the particles in ``indices``."""
    mass = np.asarray(mass, dtype=float)
    pos = np.asarray(pos, dtype=float)
    out = np.empty((len(indices), 3))
    for row, i in enumerate(indices):
        d = pos - pos[i]
        r2 = np.einsum("ij,ij->i", d, d) + eps * eps
        r2[i] = 1.0  # self term is zeroed below; keeps eps = 0 finite
        s = g * mass[i] * mass / (r2 * np.sqrt(r2))
        s[i] = 0.0
        out[row] = (s[:, None] * d).sum(axis=0)
    return out


def partition(n_updated, n_clients):
    """Contiguous, disjoint index ranges, one per client."""
    bounds = [n_updated * k // n_clients for k in range(n_clients + 1)]
    return [range(bounds[k], bounds[k + 1]) for k in range(n_clients)]


def check_partition(ranges, n_updated):
    seen = set()
    for r in ranges:
        if seen.intersection(r):
            raise ConfigurationError("overlapping particle ranges")
        seen.update(r)
    if seen != set(range(n_updated)):
        raise ConfigurationError("particle ranges do not cover the updated set")


def update_particles(lom, root, head, indices, *, dt=DT, g=G, eps=SOFTENING, visit_work=0.0):
    """Compute forces for ``indices`` (sorted list positions) and Euler-step them.

    Returns ``{index: (force, mass, position, velocity)}`` with the new state.
    """
    indices = sorted(indices)
    out = {}
    if not indices:
        return out
    cur, i = head, 0
    for target in indices:
        while i < target:
            cur = lom.read_ref(cur, NEXT)
            i += 1
        h = lom.handle(cur)
        m, p, v = _unpack_particle(lom.read_data(h))
        own_leaf = lom.read_ref(h, LEAF)
        f = octree_force(lom, root, p, m, own_leaf, g=g, eps=eps, visit_work=visit_work)
        v = tuple(v[k] + f[k] / m * dt for k in range(3))
        p = tuple(p[k] + v[k] * dt for k in range(3))
        lom.write_data(h, _pack_particle(m, p, v))
        out[target] = (f, m, p, v)
    return out


def nbody_program(mass, pos, vel, ranges, *, dt=DT, visit_work=0.0, max_depth=MAX_DEPTH):
    """Client program: client 0 builds, everyone barriers, each client updates its range."""
    def program(lom):
        if lom.index == 0:
            with lom.phase("build"):
                build(lom, mass, pos, vel, max_depth=max_depth, visit_work=visit_work)
        lom.barrier()
        with lom.phase("force"):
            root = lom.read_ref(ANCHOR, 0)
            head = lom.read_ref(ANCHOR, 1)
            result = update_particles(lom, root, head, ranges[lom.index], dt=dt,
                                      visit_work=visit_work)
        lom.barrier()
        return result
    return program


def read_particles(heap, n):
    """Final particle states straight from the master copies, in list order."""
    anchor = heap.master(ANCHOR)
    cur = anchor.refs[1]
    states = []
    for _ in range(n):
        obj = heap.master(cur)
        states.append(_unpack_particle(obj.data))
        cur = obj.refs[NEXT]
    return states
