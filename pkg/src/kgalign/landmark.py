"""Seed-distance centrality scores and connectivity-aware landmark recall."""

from __future__ import annotations

import heapq
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .partition import MergedGraph, Partition, Subgraph, induce_subgraphs, induced_triples

LOGGER = logging.getLogger(__name__)

DEFAULT_ETA = 0.001
DEFAULT_FLOOR = 0.49
DEFAULT_DECAY = 0.01
# (partitions, landmark budget) per dataset scale
SCALE_DEFAULTS = {"15K": (5, 7500), "100K": (10, 25000), "1M": (40, 90000)}


@dataclass
class ScoreTable:
    importance: np.ndarray
    influence: np.ndarray
    eta: float
    labeling_floor: float
    hops: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, dtype=np.int64))


def label_importance(
    m: MergedGraph, seeds: Sequence[int] | np.ndarray, eta: float = DEFAULT_ETA, floor: float = DEFAULT_FLOOR
) -> ScoreTable:
    """Multi-source BFS from the seed nodes; hop ``d`` gets ``1 / (eta + d)``.

    Expansion stops at the first hop whose value would fall below ``floor``;
    everything not reached keeps importance 0. ``hops`` holds the labelled
    distance (-1 for unlabelled nodes).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if floor < 0:
        raise ValueError("floor must be non-negative")
    n = m.num_nodes
    importance = np.zeros(n)
    hops = np.full(n, -1, dtype=np.int64)
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if len(seeds) == 0:
        warnings.warn("no seed nodes: all importances are 0", RuntimeWarning, stacklevel=2)
        return ScoreTable(importance, np.zeros(n), eta, floor, hops)
    adj = m.binary_adjacency()
    frontier = seeds
    d = 0
    while len(frontier) and 1.0 / (eta + d) >= floor:
        hops[frontier] = d
        importance[frontier] = 1.0 / (eta + d)
        nxt = np.unique(adj[frontier].indices)
        frontier = nxt[hops[nxt] < 0]
        d += 1
    return ScoreTable(importance, np.zeros(n), eta, floor, hops)


def label_influence(m: MergedGraph, scores: ScoreTable) -> ScoreTable:
    """Influence = sum of neighbour importances over the undirected neighbour set."""
    influence = np.asarray(m.binary_adjacency() @ scores.importance, dtype=float)
    return ScoreTable(scores.importance, influence, scores.eta, scores.labeling_floor, scores.hops)


def score_nodes(m: MergedGraph, eta: float = DEFAULT_ETA, floor: float = DEFAULT_FLOOR) -> ScoreTable:
    return label_influence(m, label_importance(m, m.seeds, eta, floor))


# ------------------------------------------------------------------ candidates


@dataclass
class Candidates:
    """Nodes within two hops outside a subgraph, sorted by node id.

    ``max_nei`` is -1 for hop-1 candidates; for hop-2 candidates it is the
    adjacent hop-1 candidate with the largest influence (ties: lower id).
    """

    nodes: np.ndarray
    hop: np.ndarray
    max_nei: np.ndarray

    def __len__(self) -> int:
        return len(self.nodes)

    def as_set(self) -> set[tuple[int, int, int | None]]:
        return {
            (n, h, None if x < 0 else x)
            for n, h, x in zip(self.nodes.tolist(), self.hop.tolist(), self.max_nei.tolist())
        }


def candidate_set(s: Subgraph, m: MergedGraph, scores: ScoreTable | None = None) -> Candidates:
    adj = m.binary_adjacency()
    inside = np.zeros(m.num_nodes, dtype=bool)
    inside[s.nodes] = True
    hop1 = np.unique(adj[s.nodes].indices)
    hop1 = hop1[~inside[hop1]]
    seen = inside.copy()
    seen[hop1] = True
    hop2 = np.unique(adj[hop1].indices) if len(hop1) else np.empty(0, dtype=np.int64)
    hop2 = hop2[~seen[hop2]]

    max_nei = np.full(len(hop2), -1, dtype=np.int64)
    if len(hop2):
        in_hop1 = np.zeros(m.num_nodes, dtype=bool)
        in_hop1[hop1] = True
        sub = adj[hop2]
        rows = np.repeat(np.arange(len(hop2)), np.diff(sub.indptr))
        cols = sub.indices
        keep = in_hop1[cols]
        rows, cols = rows[keep], cols[keep]
        infl = scores.influence[cols] if scores is not None else np.zeros(len(cols))
        order = np.lexsort((cols, -infl, rows))
        first = np.unique(rows[order], return_index=True)[1]
        max_nei[rows[order][first]] = cols[order][first]

    nodes = np.concatenate([hop1, hop2]).astype(np.int64)
    hop = np.concatenate([np.ones(len(hop1), np.int64), np.full(len(hop2), 2, np.int64)])
    nei = np.concatenate([np.full(len(hop1), -1, np.int64), max_nei])
    order = np.argsort(nodes, kind="stable")
    return Candidates(nodes[order], hop[order], nei[order])


@dataclass
class BenefitQuery:
    subgraph: Subgraph
    lam: float
    hop: dict[int, int]

    @classmethod
    def from_candidates(cls, s: Subgraph, cands: Candidates, lam: float = DEFAULT_DECAY) -> "BenefitQuery":
        return cls(s, lam, dict(zip(cands.nodes.tolist(), cands.hop.tolist())))


def benefit(e: int, q: BenefitQuery, scores: ScoreTable) -> float:
    if e not in q.hop:
        raise KeyError(f"node {e} is not a candidate of block {q.subgraph.block}")
    return float(scores.influence[e] * q.lam ** q.hop[e])


def benefits(cands: Candidates, scores: ScoreTable, lam: float = DEFAULT_DECAY) -> np.ndarray:
    return scores.influence[cands.nodes] * lam ** cands.hop.astype(float)


# ------------------------------------------------------------------- selection


@dataclass
class LandmarkSet:
    members: np.ndarray
    budget: int
    hop: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    benefit: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self) -> int:
        return len(self.members)


def select_landmarks(
    s: Subgraph,
    candidates: Candidates,
    scores: ScoreTable,
    k: int,
    lam: float = DEFAULT_DECAY,
    trace: list | None = None,
) -> LandmarkSet:
    """Greedy top-k landmark recall keeping every landmark connected to ``s``.

    Candidates are visited by descending benefit (ties: lower node id). A
    hop-2 candidate whose best hop-1 neighbour is not yet recalled is parked
    together with that neighbour under their mean benefit; parked pairs are
    released before a hop-1 candidate of lower benefit while at least three
    budget slots remain. Parked pairs left at the end are dropped.

    ``trace``, when given, receives ``("add", node)``, ``("hold", node,
    neighbour, avg)`` and ``("pop", node, neighbour)`` events in order.
    """
    if k < 0:
        raise ValueError("budget must be non-negative")
    om = benefits(candidates, scores, lam)
    # candidates are sorted by node id, so a stable sort breaks ties by id
    order = np.argsort(-om, kind="stable")
    nei = candidates.max_nei
    has_nei = nei >= 0
    nei_pos = np.full(len(nei), -1, dtype=np.int64)
    nei_pos[has_nei] = np.searchsorted(candidates.nodes, nei[has_nei])
    nei_om = np.zeros(len(om))
    nei_om[has_nei] = om[nei_pos[has_nei]]
    nodes = candidates.nodes

    # Scalar loop over plain lists in visiting order; membership is a flag
    # per candidate position. Sequential access keeps large sets cache-friendly.
    visit = zip(
        order.tolist(),
        candidates.hop[order].tolist(),
        nei_pos[order].tolist(),
        om[order].tolist(),
        nei_om[order].tolist(),
    )
    chosen = bytearray(len(om))
    n_chosen = 0
    held: list[tuple[float, int, int, int]] = []
    push, pop = heapq.heappush, heapq.heappop
    inter = 0.0
    n_held = 0  # insertion counter: equal averages leave the heap first-in first-out
    for i, hop, j, om_e, om_j in visit:
        if n_chosen >= k:
            break
        if hop > 1:
            if j < 0:
                continue  # no hop-1 neighbour: unreachable through the subgraph
            if chosen[j]:
                chosen[i] = 1
                n_chosen += 1
                if trace is not None:
                    trace.append(("add", int(nodes[i])))
            else:
                avg = (om_e + om_j) / 2.0
                push(held, (-avg, n_held, i, j))
                n_held += 1
                if avg > inter:
                    inter = avg
                if trace is not None:
                    trace.append(("hold", int(nodes[i]), int(nodes[j]), avg))
        else:
            while om_e < inter and n_chosen < k - 2:
                _, _, a, b = pop(held)
                for x in (a, b):
                    if not chosen[x]:
                        chosen[x] = 1
                        n_chosen += 1
                if trace is not None:
                    trace.append(("pop", int(nodes[a]), int(nodes[b])))
                inter = -held[0][0] if held else 0.0
            if not chosen[i]:
                chosen[i] = 1
                n_chosen += 1
            if trace is not None:
                trace.append(("add", int(nodes[i])))

    pos = np.flatnonzero(np.frombuffer(chosen, dtype=np.uint8)) if len(om) else np.empty(0, dtype=np.int64)
    return LandmarkSet(nodes[pos], k, candidates.hop[pos], om[pos])


def generate_subgraphs(
    m: MergedGraph,
    p: Partition,
    scores: ScoreTable,
    k: int,
    lam: float = DEFAULT_DECAY,
) -> tuple[list[Subgraph], list[LandmarkSet]]:
    """Recall up to ``k`` landmarks into every block and re-induce its triples."""
    subgraphs = induce_subgraphs(p, m)
    if k == 0:
        return subgraphs, [LandmarkSet(np.empty(0, dtype=np.int64), 0) for _ in subgraphs]
    out, sets = [], []
    for s in subgraphs:
        cands = candidate_set(s, m, scores)
        ls = select_landmarks(s, cands, scores, k, lam)
        members = np.union1d(s.core_nodes, ls.members)
        out.append(Subgraph(s.block, s.core_nodes, ls.members, induced_triples(m.triples, members, m.num_nodes)))
        sets.append(ls)
        LOGGER.debug("block %d: %d candidates, %d landmarks", s.block, len(cands), len(ls))
    return out, sets


def attach_landmarks(
    m: MergedGraph, p: Partition, landmarks: dict[int, np.ndarray]
) -> list[Subgraph]:
    """Rebuild subgraphs from a partition and per-block landmark members."""
    out = []
    for s in induce_subgraphs(p, m):
        lm = np.asarray(sorted(landmarks.get(s.block, [])), dtype=np.int64)
        if len(lm):
            members = np.union1d(s.core_nodes, lm)
            s = Subgraph(s.block, s.core_nodes, lm, induced_triples(m.triples, members, m.num_nodes))
        out.append(s)
    return out


def write_landmarks(sets: Sequence[LandmarkSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for block, ls in enumerate(sets):
            for node, hop, b in zip(ls.members.tolist(), ls.hop.tolist(), ls.benefit.tolist()):
                fh.write(f"{block}\t{node}\t{hop}\t{b:.6f}\n")


def read_landmarks(path: str | Path) -> dict[int, np.ndarray]:
    by_block: dict[int, list[int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: malformed landmark line")
            by_block.setdefault(int(parts[0]), []).append(int(parts[1]))
    return {b: np.asarray(v, dtype=np.int64) for b, v in by_block.items()}


__all__ = [
    "BenefitQuery",
    "Candidates",
    "LandmarkSet",
    "SCALE_DEFAULTS",
    "ScoreTable",
    "attach_landmarks",
    "benefit",
    "benefits",
    "candidate_set",
    "generate_subgraphs",
    "label_importance",
    "label_influence",
    "read_landmarks",
    "score_nodes",
    "select_landmarks",
]
