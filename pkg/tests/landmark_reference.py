"""Independent step-by-step landmark selection used as a test oracle.

Written directly from the pseudocode with plain Python containers and no
code shared with the package: rank by descending benefit (ties: lower
node), walk the ranking, park unreachable two-hop candidates with their
best neighbour, release parked pairs ahead of weaker one-hop candidates.
"""

from __future__ import annotations

from collections import deque


def reference_select(cands, k):
    """``cands``: list of ``(node, hop, max_nei or None, benefit)``. Returns (members, log)."""
    omega = {c[0]: c[3] for c in cands}
    ranked = sorted(cands, key=lambda c: (-c[3], c[0]))
    held = []  # [avg, insertion, node, neighbour]
    inserted = 0
    inter = 0.0
    members = []
    log = []
    i = 0
    while i < len(ranked) and len(members) < k:
        node, hop, nei, om = ranked[i]
        if hop > 1:
            if nei is None:
                pass
            elif nei in members:
                members.append(node)
                log.append(("add", node))
            else:
                avg = (om + omega[nei]) / 2.0
                held.append([avg, inserted, node, nei])
                inserted += 1
                inter = max(inter, avg)
                log.append(("hold", node, nei, avg))
        else:
            while om < inter and len(members) < k - 2:
                top = max(held, key=lambda h: (h[0], -h[1]))
                held.remove(top)
                for x in (top[2], top[3]):
                    if x not in members:
                        members.append(x)
                log.append(("pop", top[2], top[3]))
                inter = max((h[0] for h in held), default=0.0)
            if node not in members:
                members.append(node)
            log.append(("add", node))
        i += 1
    return set(members), log


def connected_to_core(core, members, adjacency):
    """True when every member is reachable from ``core`` inside core plus members."""
    allowed = set(core) | set(members)
    seen = set(core)
    queue = deque(core)
    while queue:
        u = queue.popleft()
        for w in adjacency.get(u, ()):
            if w in allowed and w not in seen:
                seen.add(w)
                queue.append(w)
    return set(members) <= seen


# Hand-fixed instances: core {0}; candidates (node, hop, max_nei, benefit);
# undirected edges for the connectivity check; budget; expected members
# worked out by hand from the ranking.
_MIXED = [(1, 1, None, 4.0), (2, 2, 3, 6.0), (3, 1, None, 1.0), (4, 1, None, 3.0), (5, 2, 1, 2.0), (6, 1, None, 0.5)]
_MIXED_EDGES = [(0, 1), (0, 3), (0, 4), (0, 6), (2, 3), (5, 1)]
_TIED = [(10, 2, 20, 5.0), (11, 2, 21, 5.0), (20, 1, None, 1.0), (21, 1, None, 1.0), (22, 1, None, 2.0)]
_TIED_EDGES = [(0, 20), (0, 21), (0, 22), (10, 20), (11, 21)]
_LEFTOVER = [(1, 1, None, 3.0), (2, 2, None, 10.0), (3, 2, 1, 2.5), (4, 2, 5, 2.0), (5, 1, None, 0.5)]
_LEFTOVER_EDGES = [(0, 1), (0, 5), (1, 3), (4, 5), (2, 99)]

HAND_INSTANCES = [
    # pair parked, guard |L| < k-2 blocks its release, reachable hop-2 admitted
    dict(cands=_MIXED, edges=_MIXED_EDGES, k=3, expected={1, 4, 5}),
    # one more slot lets the parked pair through ahead of node 4
    dict(cands=_MIXED, edges=_MIXED_EDGES, k=4, expected={1, 2, 3, 4}),
    dict(cands=_MIXED, edges=_MIXED_EDGES, k=5, expected={1, 2, 3, 4, 5}),
    # equal averages release first-in first-out
    dict(cands=_TIED, edges=_TIED_EDGES, k=4, expected={10, 20, 21, 22}),
    # hop-2 without a hop-1 neighbour skipped, a parked pair left over
    dict(cands=_LEFTOVER, edges=_LEFTOVER_EDGES, k=3, expected={1, 3, 5}),
]


def adjacency_of(edges):
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    return adj
