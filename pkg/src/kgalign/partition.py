"""Seed-merged joint graph and a multilevel balanced k-way min-cut partitioner."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .kg import KnowledgeGraph, Pair

LOGGER = logging.getLogger(__name__)


@dataclass
class MergedGraph:
    """Joint graph in which every train pair is collapsed into one node.

    Source entity ``e`` maps to node ``fwd_source[e]`` and target entity ``e``
    to ``fwd_target[e]``. ``source_of``/``target_of`` invert those maps with
    ``-1`` where a node has no constituent on that side. Relations of the
    target graph are shifted by ``n_source_relations`` in ``joint``.
    """

    joint: KnowledgeGraph
    fwd_source: np.ndarray
    fwd_target: np.ndarray
    source_of: np.ndarray
    target_of: np.ndarray
    n_source_relations: int
    _weighted: sp.csr_matrix | None = field(default=None, init=False, repr=False)
    _binary: sp.csr_matrix | None = field(default=None, init=False, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.joint.num_entities

    @property
    def triples(self) -> np.ndarray:
        return self.joint.triples

    @property
    def seeds(self) -> np.ndarray:
        """Nodes produced by merging a train pair."""
        return np.flatnonzero((self.source_of >= 0) & (self.target_of >= 0))

    def weighted_adjacency(self) -> sp.csr_matrix:
        """Symmetric adjacency; weight = number of triples linking the pair, no diagonal."""
        if self._weighted is None:
            n = self.num_nodes
            h, t = self.triples[:, 0], self.triples[:, 2]
            keep = h != t
            h, t = h[keep], t[keep]
            data = np.ones(2 * len(h), dtype=np.int64)
            a = sp.coo_matrix(
                (data, (np.concatenate([h, t]), np.concatenate([t, h]))), shape=(n, n)
            ).tocsr()
            a.sum_duplicates()
            self._weighted = a
        return self._weighted

    def binary_adjacency(self) -> sp.csr_matrix:
        """0/1 neighbour matrix; the diagonal is set only for self-loop triples."""
        if self._binary is None:
            n = self.num_nodes
            h, t = self.triples[:, 0], self.triples[:, 2]
            a = sp.coo_matrix(
                (np.ones(2 * len(h)), (np.concatenate([h, t]), np.concatenate([t, h]))),
                shape=(n, n),
            ).tocsr()
            a.sum_duplicates()
            a.data[:] = 1.0
            self._binary = a
        return self._binary


def merge_graphs(
    g1: KnowledgeGraph, g2: KnowledgeGraph, train: Iterable[Pair]
) -> MergedGraph:
    train = sorted(train)
    fwd_s = np.arange(g1.num_entities, dtype=np.int64)
    fwd_t = np.full(g2.num_entities, -1, dtype=np.int64)
    seen_s: set[int] = set()
    for a, b in train:
        if not (0 <= a < g1.num_entities and 0 <= b < g2.num_entities):
            raise ValueError(f"train pair ({a}, {b}) references an unknown entity")
        if a in seen_s or fwd_t[b] >= 0:
            raise ValueError(f"train pair ({a}, {b}) violates one-to-one alignment")
        seen_s.add(a)
        fwd_t[b] = a
    rest = np.flatnonzero(fwd_t < 0)
    fwd_t[rest] = g1.num_entities + np.arange(len(rest))
    n = g1.num_entities + len(rest)

    source_of = np.full(n, -1, dtype=np.int64)
    target_of = np.full(n, -1, dtype=np.int64)
    source_of[fwd_s] = np.arange(g1.num_entities)
    target_of[fwd_t] = np.arange(g2.num_entities)

    labels = []
    for node in range(n):
        s, t = source_of[node], target_of[node]
        if s >= 0 and t >= 0:
            labels.append(f"1:{g1.entity_labels[s]}|2:{g2.entity_labels[t]}")
        elif s >= 0:
            labels.append(f"1:{g1.entity_labels[s]}")
        else:
            labels.append(f"2:{g2.entity_labels[t]}")
    rel_labels = [f"1:{r}" for r in g1.relation_labels] + [f"2:{r}" for r in g2.relation_labels]
    t1 = g1.triples.copy()
    t1[:, 0], t1[:, 2] = fwd_s[t1[:, 0]], fwd_s[t1[:, 2]]
    t2 = g2.triples.copy()
    t2[:, 0], t2[:, 2] = fwd_t[t2[:, 0]], fwd_t[t2[:, 2]]
    t2[:, 1] += g1.num_relations
    joint = KnowledgeGraph(labels, rel_labels, np.concatenate([t1, t2]))
    return MergedGraph(joint, fwd_s, fwd_t, source_of, target_of, g1.num_relations)


# ------------------------------------------------------------------ partition


@dataclass
class Partition:
    assignment: np.ndarray
    n: int
    cut_edges: int

    def block_sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n)


def max_block_size(n_nodes: int, n_blocks: int, epsilon: float) -> int:
    return math.ceil((1 + epsilon) * n_nodes / n_blocks - 1e-9)


def cut_size(triples: np.ndarray, assignment: np.ndarray) -> int:
    return int(np.count_nonzero(assignment[triples[:, 0]] != assignment[triples[:, 2]]))


class _Level:
    """Working graph at one coarsening level, stored as Python lists for fast loops."""

    def __init__(self, adj: sp.csr_matrix, vwgt: np.ndarray):
        self.adj = adj
        self.vwgt = vwgt
        self.n = adj.shape[0]
        self.indptr = adj.indptr.tolist()
        self.indices = adj.indices.tolist()
        self.data = adj.data.tolist()
        self.vw = vwgt.tolist()


def _heavy_edge_matching(lv: _Level, max_vw: int, rng: np.random.Generator) -> np.ndarray:
    indptr, indices, data, vw = lv.indptr, lv.indices, lv.data, lv.vw
    match = [-1] * lv.n
    cmap = [0] * lv.n
    nc = 0
    for u in rng.permutation(lv.n).tolist():
        if match[u] != -1:
            continue
        best, best_w = -1, 0
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if match[v] == -1 and v != u and data[k] > best_w and vw[u] + vw[v] <= max_vw:
                best, best_w = v, data[k]
        match[u] = u if best < 0 else best
        cmap[u] = nc
        if best >= 0:
            match[best] = u
            cmap[best] = nc
        nc += 1
    return np.asarray(cmap, dtype=np.int64)


def _contract(lv: _Level, cmap: np.ndarray) -> _Level:
    nc = int(cmap.max()) + 1
    p = sp.csr_matrix((np.ones(lv.n, dtype=np.int64), (np.arange(lv.n), cmap)), shape=(lv.n, nc))
    c = (p.T @ lv.adj @ p).tocsr()
    c.setdiag(0)
    c.eliminate_zeros()
    c.sort_indices()
    return _Level(c, np.bincount(cmap, weights=lv.vwgt, minlength=nc).astype(np.int64))


def _peripheral_node(lv: _Level, allowed: np.ndarray, start: int) -> int:
    """Last node reached by BFS from ``start`` within ``allowed``."""
    seen = {start}
    frontier = [start]
    last = start
    while frontier:
        nxt = []
        for u in frontier:
            for k in range(lv.indptr[u], lv.indptr[u + 1]):
                v = lv.indices[k]
                if allowed[v] and v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if nxt:
            last = min(nxt)
        frontier = nxt
    return last


def _grow(lv: _Level, n_blocks: int, max_w: int, rng: np.random.Generator) -> list[int]:
    """Greedy region growing: blocks filled one at a time from pseudo-peripheral starts."""
    part = [-1] * lv.n
    unassigned = np.ones(lv.n, dtype=bool)
    remaining = int(lv.vwgt.sum())
    for b in range(n_blocks - 1):
        target = remaining / (n_blocks - b)
        weight = 0
        heap: list[tuple[float, float, int]] = []
        conn: dict[int, float] = {}
        too_heavy = np.zeros(lv.n, dtype=bool)
        while weight < target:
            if not heap:
                free = np.flatnonzero(unassigned & ~too_heavy)
                if not len(free):
                    break
                start = int(free[rng.integers(len(free))])
                start = _peripheral_node(lv, unassigned & ~too_heavy, start)
                heapq.heappush(heap, (0.0, rng.random(), start))
            neg, _, u = heapq.heappop(heap)
            if not unassigned[u] or too_heavy[u] or -neg < conn.get(u, 0.0):
                continue
            if weight + lv.vw[u] > max_w and weight > 0:
                too_heavy[u] = True
                continue
            part[u] = b
            unassigned[u] = False
            weight += lv.vw[u]
            for k in range(lv.indptr[u], lv.indptr[u + 1]):
                v = lv.indices[k]
                if unassigned[v]:
                    conn[v] = conn.get(v, 0.0) + lv.data[k]
                    heapq.heappush(heap, (-conn[v], rng.random(), v))
        remaining -= weight
    for u in np.flatnonzero(unassigned).tolist():
        part[u] = n_blocks - 1
    return part


def _connections(lv: _Level, part: list[int], u: int) -> dict[int, int]:
    conn: dict[int, int] = {}
    for k in range(lv.indptr[u], lv.indptr[u + 1]):
        b = part[lv.indices[k]]
        conn[b] = conn.get(b, 0) + lv.data[k]
    return conn


def _boundary(lv: _Level, part: list[int]) -> np.ndarray:
    p = np.asarray(part)
    rows = np.repeat(np.arange(lv.n), np.diff(lv.adj.indptr))
    return np.unique(rows[p[rows] != p[lv.adj.indices]])


def _refine(
    lv: _Level, part: list[int], bw: list[int], max_w: int, rng: np.random.Generator, passes: int
) -> None:
    """Boundary passes that apply only cut-reducing moves into blocks with room."""
    for _ in range(passes):
        moved = 0
        cand = _boundary(lv, part)
        for u in cand[rng.permutation(len(cand))].tolist():
            b = part[u]
            conn = _connections(lv, part, u)
            internal = conn.get(b, 0)
            best, best_gain = -1, 0
            for c, w in sorted(conn.items()):
                if c != b and w - internal > best_gain and bw[c] + lv.vw[u] <= max_w:
                    best, best_gain = c, w - internal
            if best >= 0:
                part[u] = best
                bw[b] -= lv.vw[u]
                bw[best] += lv.vw[u]
                moved += 1
        if not moved:
            break


def _balance(lv: _Level, part: list[int], bw: list[int], max_w: int, n_blocks: int) -> None:
    """Move nodes out of overweight blocks, cheapest cut increase first."""
    for _ in range(n_blocks * 4):
        over = [b for b in range(n_blocks) if bw[b] > max_w]
        if not over:
            return
        for b in over:
            members = [u for u in range(lv.n) if part[u] == b]
            scored = []
            for u in members:
                conn = _connections(lv, part, u)
                internal = conn.get(b, 0)
                ext = max((w for c, w in conn.items() if c != b), default=0)
                scored.append((internal - ext, lv.vw[u], u))
            scored.sort()
            for _, _, u in scored:
                if bw[b] <= max_w:
                    break
                conn = _connections(lv, part, u)
                internal = conn.get(b, 0)
                options = [
                    (conn.get(c, 0) - internal, -bw[c], -c)
                    for c in range(n_blocks)
                    if c != b and bw[c] + lv.vw[u] <= max_w
                ]
                if not options:
                    continue
                c = -max(options)[2]
                part[u] = c
                bw[b] -= lv.vw[u]
                bw[c] += lv.vw[u]


def _cut(lv: _Level, part: list[int]) -> int:
    p = np.asarray(part)
    rows = np.repeat(np.arange(lv.n), np.diff(lv.adj.indptr))
    diff = p[rows] != p[lv.adj.indices]
    return int(lv.adj.data[diff].sum()) // 2


def partition(
    m: MergedGraph,
    n: int,
    epsilon: float = 0.05,
    seed: int = 0,
    refine_passes: int = 8,
) -> Partition:
    """Balanced ``n``-way partition of the joint graph minimising the edge cut.

    Multilevel: heavy-edge matching coarsens the graph, several seeded
    region-growing trials partition the coarsest level, and the best one is
    projected back with boundary refinement at every level.
    """
    N = m.num_nodes
    if n < 1 or n > N:
        raise ValueError(f"block count must be in 1..{N}, got {n}")
    if epsilon < 0:
        raise ValueError("balance slack epsilon must be non-negative")
    max_w = max_block_size(N, n, epsilon)
    if max_w * n < N:
        raise ValueError(f"balance infeasible: {n} blocks of at most {max_w} nodes")
    if n == 1:
        return Partition(np.zeros(N, dtype=np.int64), 1, 0)

    rng = np.random.default_rng(seed)
    levels = [_Level(m.weighted_adjacency(), np.ones(N, dtype=np.int64))]
    cmaps: list[np.ndarray] = []
    coarsen_to = max(15 * n, 40)
    max_vw = max(1, max_w // 4)
    while levels[-1].n > coarsen_to:
        cmap = _heavy_edge_matching(levels[-1], max_vw, rng)
        nc = int(cmap.max()) + 1
        if nc > 0.95 * levels[-1].n:
            break
        cmaps.append(cmap)
        levels.append(_contract(levels[-1], cmap))
    coarse = levels[-1]

    trials = 16 if coarse.n <= 64 else 6
    best: tuple[tuple[int, int], list[int]] | None = None
    for _ in range(trials):
        part = _grow(coarse, n, max_w, rng)
        bw = np.bincount(part, weights=coarse.vwgt, minlength=n).astype(np.int64).tolist()
        _balance(coarse, part, bw, max_w, n)
        _refine(coarse, part, bw, max_w, rng, refine_passes)
        score = (max(0, max(bw) - max_w), _cut(coarse, part))
        if best is None or score < best[0]:
            best = (score, part)
    assert best is not None
    part = best[1]

    for depth in range(len(cmaps) - 1, -1, -1):
        lv = levels[depth]
        part = np.asarray(part)[cmaps[depth]].tolist()
        bw = np.bincount(part, weights=lv.vwgt, minlength=n).astype(np.int64).tolist()
        _balance(lv, part, bw, max_w, n)
        _refine(lv, part, bw, max_w, rng, refine_passes)
    fine = levels[0]
    bw = np.bincount(part, minlength=n).tolist()
    _balance(fine, part, bw, max_w, n)

    assignment = np.asarray(part, dtype=np.int64)
    if assignment.max() >= n or np.bincount(assignment, minlength=n).max() > max_w:
        raise RuntimeError("partitioner failed to reach the balance constraint")
    cut = cut_size(m.triples, assignment)
    LOGGER.info("partition n=%d: cut=%d sizes=%s", n, cut, np.bincount(assignment, minlength=n).tolist())
    return Partition(assignment, n, cut)


def preserved_alignment_recall(p: Partition, m: MergedGraph, pairs: Iterable[Pair]) -> float:
    """Fraction of pairs whose two nodes land in the same block; 1.0 for no pairs."""
    pairs = list(pairs)
    if not pairs:
        return 1.0
    arr = np.asarray(pairs, dtype=np.int64)
    a = p.assignment[m.fwd_source[arr[:, 0]]]
    b = p.assignment[m.fwd_target[arr[:, 1]]]
    return float(np.mean(a == b))


# ------------------------------------------------------------------ subgraphs


@dataclass
class Subgraph:
    """One block plus recalled landmarks; ``triples`` are joint-node triples."""

    block: int
    core_nodes: np.ndarray
    landmark_nodes: np.ndarray
    triples: np.ndarray

    @property
    def nodes(self) -> np.ndarray:
        """Sorted union of core and landmark nodes."""
        return np.union1d(self.core_nodes, self.landmark_nodes)

    @property
    def size(self) -> int:
        return len(self.core_nodes) + len(self.landmark_nodes)


def induced_triples(triples: np.ndarray, members: np.ndarray, n_nodes: int) -> np.ndarray:
    mask = np.zeros(n_nodes, dtype=bool)
    mask[members] = True
    return triples[mask[triples[:, 0]] & mask[triples[:, 2]]]


def induce_subgraphs(p: Partition, m: MergedGraph) -> list[Subgraph]:
    order = np.argsort(p.assignment, kind="stable")
    bounds = np.searchsorted(p.assignment[order], np.arange(p.n + 1))
    t = m.triples
    hb, tb = p.assignment[t[:, 0]], p.assignment[t[:, 2]]
    inner = t[hb == tb]
    inner_block = hb[hb == tb]
    torder = np.argsort(inner_block, kind="stable")
    tbounds = np.searchsorted(inner_block[torder], np.arange(p.n + 1))
    empty = np.empty(0, dtype=np.int64)
    return [
        Subgraph(
            b,
            np.sort(order[bounds[b] : bounds[b + 1]]),
            empty,
            inner[torder[tbounds[b] : tbounds[b + 1]]],
        )
        for b in range(p.n)
    ]


# ------------------------------------------------------------------------ IO


def write_partition(p: Partition, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#nodes={len(p.assignment)} #blocks={p.n} cut={p.cut_edges}\n")
        fh.writelines(f"{i}\t{b}\n" for i, b in enumerate(p.assignment.tolist()))


def read_partition(path: str | Path) -> Partition:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        fields = dict(tok.lstrip("#").split("=", 1) for tok in header)
        n_nodes, n_blocks, cut = int(fields["nodes"]), int(fields["blocks"]), int(fields["cut"])
        assignment = np.full(n_nodes, -1, dtype=np.int64)
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: malformed partition line")
            assignment[int(parts[0])] = int(parts[1])
    if (assignment < 0).any():
        raise ValueError(f"{path}: not every node is assigned")
    return Partition(assignment, n_blocks, cut)


__all__ = [
    "MergedGraph",
    "Partition",
    "Subgraph",
    "cut_size",
    "induce_subgraphs",
    "induced_triples",
    "max_block_size",
    "merge_graphs",
    "partition",
    "preserved_alignment_recall",
    "read_partition",
    "write_partition",
]
