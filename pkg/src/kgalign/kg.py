"""Knowledge graph data model, OpenEA-style file IO and a synthetic pair generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

LOGGER = logging.getLogger(__name__)

OUT, IN = 0, 1

Pair = tuple[int, int]


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class KnowledgeGraph:
    """A directed multi-relational graph with dense integer identifiers.

    ``triples`` is an ``(m, 3)`` int64 array of ``(head, relation, tail)``
    rows. Labels are kept as opaque strings; nothing downstream compares them.
    """

    entity_labels: list[str]
    relation_labels: list[str]
    triples: np.ndarray
    dropped_duplicates: int = 0
    entity_index: dict[str, int] = field(init=False, repr=False)
    relation_index: dict[str, int] = field(init=False, repr=False)
    _adj: tuple[np.ndarray, ...] | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.entity_index = {lab: i for i, lab in enumerate(self.entity_labels)}
        self.relation_index = {lab: i for i, lab in enumerate(self.relation_labels)}
        if len(self.entity_index) != len(self.entity_labels):
            raise DatasetError("duplicate entity label")
        if len(self.relation_index) != len(self.relation_labels):
            raise DatasetError("duplicate relation label")
        if len(self.triples):
            ents = self.triples[:, [0, 2]]
            if ents.min() < 0 or ents.max() >= self.num_entities:
                raise DatasetError("triple references an unknown entity id")
            rels = self.triples[:, 1]
            if rels.min() < 0 or rels.max() >= self.num_relations:
                raise DatasetError("triple references an unknown relation id")
        uniq = np.unique(self.triples, axis=0)
        if len(uniq) != len(self.triples):
            raise DatasetError("duplicate triples; deduplicate before construction")

    @classmethod
    def from_labeled_triples(
        cls, rows: Iterable[tuple[str, str, str]], extra_entities: Sequence[str] = ()
    ) -> "KnowledgeGraph":
        """Build a graph assigning ids in order of first appearance; duplicates are dropped."""
        ents: dict[str, int] = {}
        rels: dict[str, int] = {}
        seen: set[tuple[int, int, int]] = set()
        out: list[tuple[int, int, int]] = []
        dropped = 0
        for h, r, t in rows:
            hi = ents.setdefault(h, len(ents))
            ri = rels.setdefault(r, len(rels))
            ti = ents.setdefault(t, len(ents))
            key = (hi, ri, ti)
            if key in seen:
                dropped += 1
                continue
            seen.add(key)
            out.append(key)
        for lab in extra_entities:
            ents.setdefault(lab, len(ents))
        return cls(list(ents), list(rels), np.array(out, dtype=np.int64).reshape(-1, 3), dropped)

    @property
    def num_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def _adjacency_arrays(self) -> tuple[np.ndarray, ...]:
        if self._adj is None:
            h, r, t = self.triples.T
            owner = np.concatenate([h, t])
            other = np.concatenate([t, h])
            rel = np.concatenate([r, r])
            direction = np.concatenate(
                [np.full(len(h), OUT, np.int8), np.full(len(h), IN, np.int8)]
            )
            order = np.argsort(owner, kind="stable")
            indptr = np.zeros(self.num_entities + 1, dtype=np.int64)
            np.cumsum(np.bincount(owner, minlength=self.num_entities), out=indptr[1:])
            self._adj = (indptr, other[order], rel[order], direction[order])
        return self._adj

    def adjacency(self, e: int) -> list[tuple[int, int, int]]:
        """``(neighbor, relation, direction)`` entries of entity ``e``; direction 0 = outgoing."""
        self._check_entity(e)
        indptr, other, rel, direction = self._adjacency_arrays()
        lo, hi = indptr[e], indptr[e + 1]
        return list(zip(other[lo:hi].tolist(), rel[lo:hi].tolist(), direction[lo:hi].tolist()))

    def degree(self) -> np.ndarray:
        return np.diff(self._adjacency_arrays()[0])

    @property
    def isolated(self) -> np.ndarray:
        """Boolean mask of entities that take part in no triple."""
        return self.degree() == 0

    def _check_entity(self, e: int) -> None:
        if not 0 <= e < self.num_entities:
            raise IndexError(f"entity id {e} out of range 0..{self.num_entities - 1}")


def neighbors(g: KnowledgeGraph, e: int) -> set[int]:
    """Undirected neighbour set of ``e``; contains ``e`` only for self-loops."""
    g._check_entity(e)
    indptr, other, _, _ = g._adjacency_arrays()
    return set(other[indptr[e] : indptr[e + 1]].tolist())


@dataclass
class AlignmentSet:
    train: set[Pair] = field(default_factory=set)
    valid: set[Pair] = field(default_factory=set)
    test: set[Pair] = field(default_factory=set)

    def __post_init__(self) -> None:
        names = ("train", "valid", "test")
        for name in names:
            pairs = getattr(self, name)
            if len({a for a, _ in pairs}) != len(pairs) or len({b for _, b in pairs}) != len(pairs):
                raise DatasetError(f"{name} alignment is not one-to-one")
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                if getattr(self, a) & getattr(self, b):
                    raise DatasetError(f"{a} and {b} alignment sets overlap")

    def all_pairs(self) -> set[Pair]:
        return self.train | self.valid | self.test


# --------------------------------------------------------------------------- IO


def _read_tsv(path: Path, n_fields: int) -> list[tuple[int, list[str]]]:
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != n_fields:
                raise DatasetError(
                    f"{path.name}:{lineno}: expected {n_fields} TAB-separated fields, got {len(parts)}"
                )
            rows.append((lineno, parts))
    return rows


def read_triples(path: str | Path) -> KnowledgeGraph:
    rows = _read_tsv(Path(path), 3)
    g = KnowledgeGraph.from_labeled_triples(tuple(p) for _, p in rows)
    if g.dropped_duplicates:
        LOGGER.info("%s: dropped %d duplicate triples", Path(path).name, g.dropped_duplicates)
    return g


def write_triples(g: KnowledgeGraph, path: str | Path) -> None:
    ents, rels = g.entity_labels, g.relation_labels
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in g.triples.tolist():
            fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


def read_links(path: str | Path, g1: KnowledgeGraph, g2: KnowledgeGraph) -> list[Pair]:
    path = Path(path)
    pairs = []
    for lineno, (a, b) in _read_tsv(path, 2):
        if a not in g1.entity_index:
            raise DatasetError(f"{path.name}:{lineno}: unknown source entity {a!r}")
        if b not in g2.entity_index:
            raise DatasetError(f"{path.name}:{lineno}: unknown target entity {b!r}")
        pairs.append((g1.entity_index[a], g2.entity_index[b]))
    return pairs


def write_links(
    pairs: Iterable[Pair], path: str | Path, g1: KnowledgeGraph, g2: KnowledgeGraph
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in sorted(pairs):
            fh.write(f"{g1.entity_labels[a]}\t{g2.entity_labels[b]}\n")


def split_alignment(
    pairs: Sequence[Pair], split_fraction: tuple[float, float], seed: int
) -> AlignmentSet:
    f_train, f_valid = split_fraction
    if f_train <= 0 or f_valid <= 0 or f_train + f_valid >= 1:
        raise ValueError("split fractions must be positive and sum to less than 1")
    pairs = list(pairs)
    order = np.random.default_rng(seed).permutation(len(pairs))
    n_train = int(round(f_train * len(pairs)))
    n_valid = int(round(f_valid * len(pairs)))
    shuffled = [pairs[i] for i in order]
    return AlignmentSet(
        set(shuffled[:n_train]),
        set(shuffled[n_train : n_train + n_valid]),
        set(shuffled[n_train + n_valid :]),
    )


def load_dataset(
    dir_path: str | Path,
    split_fraction: tuple[float, float] = (0.3, 0.1),
    seed: int = 0,
    write_split: bool = False,
) -> tuple[KnowledgeGraph, KnowledgeGraph, AlignmentSet]:
    """Load ``rel_triples_1``, ``rel_triples_2`` and ``ent_links`` from ``dir_path``.

    The gold links are split by a seeded shuffle. With ``write_split`` the
    three link files ``train_links``/``valid_links``/``test_links`` are
    written into the same directory.
    """
    d = Path(dir_path)
    g1 = read_triples(d / "rel_triples_1")
    g2 = read_triples(d / "rel_triples_2")
    links = read_links(d / "ent_links", g1, g2)
    if len({a for a, _ in links}) != len(links) or len({b for _, b in links}) != len(links):
        raise DatasetError("ent_links is not one-to-one")
    align = split_alignment(links, split_fraction, seed)
    if write_split:
        write_split_files(d, g1, g2, align)
    return g1, g2, align


def write_split_files(
    d: str | Path, g1: KnowledgeGraph, g2: KnowledgeGraph, align: AlignmentSet
) -> None:
    d = Path(d)
    write_links(align.train, d / "train_links", g1, g2)
    write_links(align.valid, d / "valid_links", g1, g2)
    write_links(align.test, d / "test_links", g1, g2)


def write_dataset(
    d: str | Path, g1: KnowledgeGraph, g2: KnowledgeGraph, gold: Iterable[Pair]
) -> None:
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    write_triples(g1, d / "rel_triples_1")
    write_triples(g2, d / "rel_triples_2")
    write_links(gold, d / "ent_links", g1, g2)


# -------------------------------------------------------------------- synthetic


def _random_edges(
    n: int, m: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Connected random edge list: random recursive tree, leaves patched, rest uniform."""
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    deg = np.zeros(n, dtype=np.int64)

    def add(u: int, v: int) -> bool:
        key = (min(u, v), max(u, v))
        if u == v or key in seen:
            return False
        seen.add(key)
        edges.append((u, v))
        deg[u] += 1
        deg[v] += 1
        return True

    parents = [int(rng.integers(0, i)) for i in range(1, n)]
    for child, parent in enumerate(parents, start=1):
        if len(edges) >= m:
            break
        add(child, parent)
    for u in np.flatnonzero(deg == 1).tolist():
        if len(edges) >= m:
            break
        while not add(u, int(rng.integers(0, n))):
            pass
    tries = 0
    while len(edges) < m and tries < 50 * m:
        tries += 1
        add(int(rng.integers(0, n)), int(rng.integers(0, n)))
    # an entity without triples would vanish from the triple files
    for u in np.flatnonzero(deg == 0).tolist():
        while not add(u, int(rng.integers(0, n))):
            pass
    return edges


def generate_synthetic_pair(
    n_entities: int,
    n_relations: int,
    avg_degree: float,
    overlap_fraction: float,
    seed: int,
) -> tuple[KnowledgeGraph, KnowledgeGraph, AlignmentSet]:
    """Random source KG and a partially isomorphic, relabelled target KG.

    The target holds a relabelled copy of ``overlap_fraction`` of the source
    entities with every source triple among them, plus fresh non-matchable
    entities wired in with extra triples so that both sides have the same
    size. Gold pairs are returned in ``AlignmentSet.test``; callers split them.
    """
    if n_entities < 2:
        raise ValueError("n_entities must be at least 2")
    if not 0 < overlap_fraction <= 1:
        raise ValueError("overlap_fraction must be in (0, 1]")
    if n_relations < 1:
        raise ValueError("n_relations must be positive")
    m = int(round(n_entities * avg_degree / 2))
    if m < 1:
        raise ValueError("avg_degree too low: the graph would have no triples")

    rng = np.random.default_rng(seed)
    edges = _random_edges(n_entities, m, rng)
    rels = rng.integers(0, n_relations, size=len(edges))
    flip = rng.random(len(edges)) < 0.5
    src_rows = [
        (v, int(r), u) if f else (u, int(r), v)
        for (u, v), r, f in zip(edges, rels.tolist(), flip.tolist())
    ]
    g1 = KnowledgeGraph(
        [f"s{i}" for i in range(n_entities)],
        [f"r{i}" for i in range(n_relations)],
        np.array(src_rows, dtype=np.int64),
    )

    n_match = int(round(overlap_fraction * n_entities))
    matched = np.sort(rng.choice(n_entities, size=n_match, replace=False))
    n_fresh = n_entities - n_match
    # target ids: a random permutation so identifiers carry no alignment signal
    perm = rng.permutation(n_entities)
    tgt_of_src = np.full(n_entities, -1, dtype=np.int64)
    tgt_of_src[matched] = perm[:n_match]
    fresh_ids = perm[n_match:]
    rel_perm = rng.permutation(n_relations)

    rows: set[tuple[int, int, int]] = set()
    for h, r, t in src_rows:
        th, tt = tgt_of_src[h], tgt_of_src[t]
        if th >= 0 and tt >= 0:
            rows.add((int(th), int(rel_perm[r]), int(tt)))
    if n_fresh:
        per_fresh = max(1, int(round(avg_degree / 2)))
        for i, f in enumerate(fresh_ids.tolist()):
            for _ in range(per_fresh):
                # earlier ids only for the first triple keeps fresh entities attached
                other = int(perm[rng.integers(0, n_match + i)]) if n_match + i > 0 else f
                if other == f:
                    continue
                r = int(rng.integers(0, n_relations))
                rows.add((f, r, other) if rng.random() < 0.5 else (other, r, f))
    touched = np.zeros(n_entities, dtype=bool)
    for h, _, t in rows:
        touched[h] = touched[t] = True
    for f in np.flatnonzero(~touched).tolist():
        # matched entities whose source neighbours were all dropped get one perturbation triple
        other = f
        while other == f:
            other = int(rng.integers(0, n_entities))
        rows.add((f, int(rng.integers(0, n_relations)), other))
    tgt_rows = sorted(rows)
    tgt_rows = [tgt_rows[i] for i in rng.permutation(len(tgt_rows))]
    g2 = KnowledgeGraph(
        [f"t{i}" for i in range(n_entities)],
        [f"q{i}" for i in range(n_relations)],
        np.array(tgt_rows, dtype=np.int64).reshape(-1, 3),
    )
    gold = {(int(s), int(tgt_of_src[s])) for s in matched}
    LOGGER.debug(
        "synthetic pair: %d entities, %d/%d triples, %d gold",
        n_entities, g1.num_triples, g2.num_triples, len(gold),
    )
    return g1, g2, AlignmentSet(test=gold)


__all__ = [
    "AlignmentSet",
    "DatasetError",
    "KnowledgeGraph",
    "generate_synthetic_pair",
    "load_dataset",
    "neighbors",
    "read_triples",
    "split_alignment",
    "write_dataset",
    "write_links",
    "write_split_files",
    "write_triples",
]
