"""Embedding-space fusion and bidirectional top-k alignment search."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EmbeddingState
from .kg import KnowledgeGraph
from .partition import MergedGraph, Subgraph

LOGGER = logging.getLogger(__name__)

_BLOCK_ELEMS = 1 << 22


@dataclass
class FusedSpace:
    source: np.ndarray
    target: np.ndarray


def fuse(
    subgraphs: Sequence[Subgraph], state: EmbeddingState, merged: MergedGraph
) -> FusedSpace:
    """Average each node's outputs over the subgraphs holding it, renormalise, unmerge."""
    if len(state.per_subgraph_output) != len(subgraphs):
        raise ValueError("state holds no outputs for these subgraphs; encode them first")
    acc = np.zeros((merged.num_nodes, state.dim))
    count = np.zeros(merged.num_nodes, dtype=np.int64)
    for s, out in zip(subgraphs, state.per_subgraph_output):
        nodes = s.nodes
        acc[nodes] += out
        count[nodes] += 1
    missing = np.flatnonzero(count == 0)
    if len(missing):
        raise ValueError(f"{len(missing)} joint nodes appear in no subgraph (e.g. node {missing[0]})")
    fused = acc / count[:, None]
    fused /= np.linalg.norm(fused, axis=1, keepdims=True)
    return FusedSpace(fused[merged.fwd_source], fused[merged.fwd_target])


# ----------------------------------------------------------------------- top-k


def _rank_select(vals: np.ndarray, idx: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row, the ``k`` entries with the highest value, ties to the lower index."""
    order = np.lexsort((idx, -vals), axis=1)[:, :k]
    return np.take_along_axis(vals, order, 1), np.take_along_axis(idx, order, 1)


def topk_exact(sim: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` columns of every row of ``sim`` ordered by (-value, column)."""
    n_rows, n_cols = sim.shape
    k = min(k, n_cols)
    if k == n_cols:
        cols = np.broadcast_to(np.arange(n_cols), sim.shape)
        return _rank_select(sim, cols, k)
    thr = -np.partition(-sim, k - 1, axis=1)[:, k - 1]
    mask = sim >= thr[:, None]
    counts = mask.sum(axis=1)
    vals = np.empty((n_rows, k))
    idx = np.empty((n_rows, k), dtype=np.int64)
    easy = counts == k
    if easy.any():
        cols = np.nonzero(mask[easy])[1].reshape(-1, k)
        v = np.take_along_axis(sim[easy], cols, 1)
        vals[easy], idx[easy] = _rank_select(v, cols, k)
    for r in np.flatnonzero(~easy).tolist():
        cols = np.flatnonzero(mask[r])
        order = np.lexsort((cols, -sim[r, cols]))[:k]
        vals[r], idx[r] = sim[r, cols[order]], cols[order]
    return vals, idx


def _blocked_topk(queries: np.ndarray, base: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    k = min(k, len(base))
    vals = np.empty((len(queries), k))
    idx = np.empty((len(queries), k), dtype=np.int64)
    step = max(1, _BLOCK_ELEMS // max(len(base), 1))
    for lo in range(0, len(queries), step):
        hi = min(lo + step, len(queries))
        vals[lo:hi], idx[lo:hi] = topk_exact(queries[lo:hi] @ base.T, k)
    return vals, idx


class IVFIndex:
    """Inverted lists over a seeded spherical k-means of the base vectors."""

    def __init__(self, base: np.ndarray, n_lists: int | None = None, seed: int = 0, n_iter: int = 10):
        self.base = base
        n = len(base)
        n_lists = n_lists or max(1, int(round(math.sqrt(n))))
        n_lists = min(n_lists, n)
        rng = np.random.default_rng(seed)
        cent = base[rng.choice(n, size=n_lists, replace=False)].copy()
        for _ in range(n_iter):
            assign = self._assign(cent)
            sums = np.zeros_like(cent)
            np.add.at(sums, assign, base)
            counts = np.bincount(assign, minlength=n_lists)
            empty = counts == 0
            if empty.any():
                sums[empty] = base[rng.choice(n, size=int(empty.sum()), replace=False)]
            norms = np.linalg.norm(sums, axis=1, keepdims=True)
            cent = sums / np.where(norms > 0, norms, 1.0)
        self.centroids = cent
        assign = self._assign(cent)
        order = np.argsort(assign, kind="stable")
        bounds = np.searchsorted(assign[order], np.arange(n_lists + 1))
        self.lists = [order[bounds[i] : bounds[i + 1]] for i in range(n_lists)]

    @property
    def n_lists(self) -> int:
        return len(self.lists)

    def _assign(self, cent: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.base), dtype=np.int64)
        step = max(1, _BLOCK_ELEMS // max(len(cent), 1))
        for lo in range(0, len(self.base), step):
            out[lo : lo + step] = np.argmax(self.base[lo : lo + step] @ cent.T, axis=1)
        return out

    def search(self, queries: np.ndarray, k: int, n_probe: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        k = min(k, len(self.base))
        n_probe = min(n_probe or max(1, int(round(math.sqrt(self.n_lists)))), self.n_lists)
        vals = np.full((len(queries), k), -np.inf)
        idx = np.full((len(queries), k), np.iinfo(np.int64).max, dtype=np.int64)
        step = max(1, _BLOCK_ELEMS // max(len(self.base), 1))
        for lo in range(0, len(queries), step):
            q = queries[lo : lo + step]
            _, probes = topk_exact(q @ self.centroids.T, n_probe)
            bv, bi = vals[lo : lo + step], idx[lo : lo + step]
            for lst in range(self.n_lists):
                rows = np.flatnonzero((probes == lst).any(axis=1))
                members = self.lists[lst]
                if not len(rows) or not len(members):
                    continue
                sim = q[rows] @ self.base[members].T
                cv = np.concatenate([bv[rows], sim], axis=1)
                ci = np.concatenate([bi[rows], np.broadcast_to(members, sim.shape)], axis=1)
                bv[rows], bi[rows] = _rank_select(cv, ci, k)
        return vals, idx


# ---------------------------------------------------------------- mutual kNN


@dataclass
class AlignmentPrediction:
    pairs: np.ndarray  # (P, 2) source id, target id
    similarity: np.ndarray

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.pairs}

    def __len__(self) -> int:
        return len(self.pairs)


def mutual_knn(
    space: FusedSpace,
    k: int = 5,
    mode: str = "exact",
    one_to_one: bool = False,
    n_lists: int | None = None,
    n_probe: int | None = None,
    seed: int = 0,
    sources: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> AlignmentPrediction:
    """Pairs ``(a, b)`` where ``b`` is in the top-k of ``a`` and ``a`` in the top-k of ``b``.

    ``sources`` / ``targets`` optionally restrict the search to those entity
    ids (e.g. excluding seed entities); returned pairs use the original ids.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if sources is not None or targets is not None:
        s_ids = np.arange(len(space.source)) if sources is None else np.asarray(sources, dtype=np.int64)
        t_ids = np.arange(len(space.target)) if targets is None else np.asarray(targets, dtype=np.int64)
        sub = mutual_knn(
            FusedSpace(space.source[s_ids], space.target[t_ids]),
            k, mode, one_to_one, n_lists, n_probe, seed,
        )
        pairs = np.stack([s_ids[sub.pairs[:, 0]], t_ids[sub.pairs[:, 1]]], axis=1) if len(sub) else sub.pairs
        return AlignmentPrediction(pairs.astype(np.int64), sub.similarity)
    src, tgt = space.source, space.target
    if len(src) == 0 or len(tgt) == 0:
        return AlignmentPrediction(np.empty((0, 2), dtype=np.int64), np.empty(0))
    if k >= len(tgt) or k >= len(src):
        warnings.warn("k covers a whole side: search degenerates to full mutuality", RuntimeWarning, stacklevel=2)
    if mode == "exact":
        s_vals, s_idx = _blocked_topk(src, tgt, k)
        _, t_idx = _blocked_topk(tgt, src, k)
    elif mode == "approximate":
        s_vals, s_idx = IVFIndex(tgt, n_lists, seed).search(src, k, n_probe)
        _, t_idx = IVFIndex(src, n_lists, seed + 1).search(tgt, k, n_probe)
    else:
        raise ValueError(f"unknown search mode {mode!r}")

    ks = s_idx.shape[1]
    a = np.repeat(np.arange(len(src)), ks)
    b = s_idx.ravel()
    sim = s_vals.ravel()
    valid = (b >= 0) & (b < len(tgt))
    a, b, sim = a[valid], b[valid], sim[valid]
    back = (t_idx[b] == a[:, None]).any(axis=1)
    a, b, sim = a[back], b[back], sim[back]
    if one_to_one:
        order = np.lexsort((b, a, -sim))
        used_a: set[int] = set()
        used_b: set[int] = set()
        keep = []
        for i in order.tolist():
            x, y = int(a[i]), int(b[i])
            if x in used_a or y in used_b:
                continue
            used_a.add(x)
            used_b.add(y)
            keep.append(i)
        keep_arr = np.sort(np.asarray(keep, dtype=np.int64))
        a, b, sim = a[keep_arr], b[keep_arr], sim[keep_arr]
    return AlignmentPrediction(np.stack([a, b], axis=1).astype(np.int64), sim)


def write_predictions(
    pred: AlignmentPrediction, path: str | Path, g1: KnowledgeGraph, g2: KnowledgeGraph
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (a, b), s in zip(pred.pairs.tolist(), pred.similarity.tolist()):
            fh.write(f"{g1.entity_labels[a]}\t{g2.entity_labels[b]}\t{s:.6f}\n")


def read_predictions(path: str | Path, g1: KnowledgeGraph, g2: KnowledgeGraph) -> AlignmentPrediction:
    pairs, sims = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: malformed prediction line")
            pairs.append((g1.entity_index[parts[0]], g2.entity_index[parts[1]]))
            sims.append(float(parts[2]))
    return AlignmentPrediction(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), np.asarray(sims))


__all__ = [
    "AlignmentPrediction",
    "FusedSpace",
    "IVFIndex",
    "fuse",
    "mutual_knn",
    "read_predictions",
    "topk_exact",
    "write_predictions",
]
