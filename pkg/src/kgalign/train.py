"""Mini-batch training over subgraphs with alignment, cross-negative and reconstruction losses."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import EmbeddingState, SubgraphView, backward, encode
from .inference import fuse
from .kg import AlignmentSet
from .losses import loss_align, loss_cross, loss_reconstruct
from .metrics import evaluate_ideal
from .partition import MergedGraph, Subgraph

LOGGER = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    dim: int = 128
    alpha: float = 15.0
    beta: float = 0.7
    n_proxies: int = 64
    n_layers: int = 3
    n_cross: int = 256
    w_align: float = 1.0
    w_cross: float = 0.1
    w_rec: float = 0.1
    lr: float = 0.01
    epochs: int = 50
    seed: int = 0
    align_form: str = "dual"
    cross_form: str = "literal"

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if min(self.w_align, self.w_cross, self.w_rec) < 0 or self.w_align <= 0:
            raise ValueError("loss weights must be non-negative with w_align > 0")
        if self.dim < 1 or self.n_proxies < 1 or self.n_layers < 1:
            raise ValueError("dim, n_proxies and n_layers must be positive")
        if self.n_cross < 0 or self.epochs < 0:
            raise ValueError("n_cross and epochs must be non-negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.align_form not in ("literal", "dual"):
            raise ValueError(f"unknown align_form {self.align_form!r}")
        if self.cross_form not in ("literal", "dual"):
            raise ValueError(f"unknown cross_form {self.cross_form!r}")

    @property
    def loss_weights(self) -> tuple[float, float, float]:
        return self.w_align, self.w_cross, self.w_rec


@dataclass
class NegativeBatch:
    """Negatives of one subgraph batch.

    Intra negatives are implicit: every node of the subgraph except the
    anchor and its counterpart. ``cross`` holds joint node ids from
    outside the subgraph, shared by all anchors of the batch.
    """

    subgraph_nodes: np.ndarray
    cross: np.ndarray

    def intra(self, anchor: int, counterpart: int) -> np.ndarray:
        nodes = self.subgraph_nodes
        return nodes[(nodes != anchor) & (nodes != counterpart)]


def sample_cross(
    nodes: np.ndarray, n_total: int, n_cross: int, rng: np.random.Generator
) -> np.ndarray:
    """Up to ``n_cross`` distinct joint nodes not in ``nodes`` (sorted)."""
    n_out = n_total - len(nodes)
    if n_out <= 0 or n_cross == 0:
        return np.empty(0, dtype=np.int64)
    take = min(n_cross, n_out)
    ranks = np.sort(rng.choice(n_out, size=take, replace=False))
    return _rank_to_node(ranks, nodes)


def _rank_to_node(ranks: np.ndarray, inside: np.ndarray) -> np.ndarray:
    # the r-th outside node is r + (#inside nodes <= it); iterate to the fixed point
    out = ranks.copy()
    while True:
        nxt = ranks + np.searchsorted(inside, out, side="right")
        if np.array_equal(nxt, out):
            return out.astype(np.int64)
        out = nxt


class _Adam:
    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def tick(self) -> None:
        self.t += 1

    def _scale(self) -> float:
        return self.lr * np.sqrt(1 - self.b2**self.t) / (1 - self.b1**self.t)

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
        m, v = self.m[name], self.v[name]
        m *= self.b1
        m += (1 - self.b1) * grad
        v *= self.b2
        v += (1 - self.b2) * grad * grad
        param -= self._scale() * m / (np.sqrt(v) + self.eps)

    def step_rows(self, name: str, param: np.ndarray, rows: np.ndarray, grad: np.ndarray) -> None:
        """Lazy update touching only ``rows`` (unique) of a large table."""
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
        m = self.b1 * self.m[name][rows] + (1 - self.b1) * grad
        v = self.b2 * self.v[name][rows] + (1 - self.b2) * grad * grad
        self.m[name][rows] = m
        self.v[name][rows] = v
        param[rows] -= self._scale() * m / (np.sqrt(v) + self.eps)


def make_view(s: Subgraph, merged: MergedGraph) -> SubgraphView:
    """Encoder view with separate source and target rows for merged seeds."""
    sides = (merged.source_of >= 0, merged.target_of >= 0, merged.n_source_relations)
    return SubgraphView(s, merged.joint.num_relations, sides)


def _train_anchors(view: SubgraphView, merged: MergedGraph, pairs: set) -> tuple[np.ndarray, np.ndarray]:
    """Encoder rows of the train pairs whose joint nodes both lie in the subgraph."""
    if not pairs:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    arr = np.asarray(sorted(pairs), dtype=np.int64)
    u = merged.fwd_source[arr[:, 0]]
    v = merged.fwd_target[arr[:, 1]]
    pos_u = np.searchsorted(view.nodes, u)
    pos_v = np.searchsorted(view.nodes, v)
    ok_u = (pos_u < view.m) & (view.nodes[np.minimum(pos_u, view.m - 1)] == u)
    ok_v = (pos_v < view.m) & (view.nodes[np.minimum(pos_v, view.m - 1)] == v)
    keep = ok_u & ok_v
    return view.src_row[pos_u[keep]], view.tgt_row[pos_v[keep]]


def _check(value: float, term: str, block: int) -> None:
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite {term} loss in subgraph {block}")


def encode_all(views: Sequence[SubgraphView], state: EmbeddingState) -> EmbeddingState:
    state.per_subgraph_output = [v.joint_output(encode(v, state)) for v in views]
    return state


def validation_hits1(
    subgraphs: Sequence[Subgraph], views: Sequence[SubgraphView], state: EmbeddingState,
    merged: MergedGraph, pairs: set,
) -> float:
    encode_all(views, state)
    space = fuse(subgraphs, state, merged)
    hits, _ = evaluate_ideal(space, pairs, ks=(1,))
    return hits[1]


def train_step(
    view: SubgraphView,
    state: EmbeddingState,
    anchors: tuple[np.ndarray, np.ndarray],
    cross: np.ndarray,
    cfg: TrainConfig,
    opt: _Adam,
) -> dict[str, float]:
    """One forward/backward/update on a single subgraph batch; returns the loss terms."""
    out, cache = encode(view, state, keep_cache=True)
    u, v = anchors
    l_align, dout = loss_align(out, u, v, cfg.alpha, cfg.beta, cfg.align_form)
    _check(l_align, "alignment", view.block)
    dout *= cfg.w_align
    l_rec = 0.0
    if cfg.w_rec > 0:
        l_rec, d_rec = loss_reconstruct(view, out)
        _check(l_rec, "reconstruction", view.block)
        # per-row mean so the term stays auxiliary whatever the subgraph size
        l_rec /= view.n_rows
        dout += (cfg.w_rec / view.n_rows) * d_rec
    grads = backward(view, state, cache, dout)
    del cache

    rows = view.nodes
    d_rows = grads.pop("x")
    l_cross = 0.0
    if cfg.w_cross > 0 and len(cross):
        l_cross, d_anchor, d_neg = loss_cross(
            state.input_table[rows], state.input_table[cross], cfg.cross_form, cfg.alpha
        )
        _check(l_cross, "cross-negative", view.block)
        d_rows += cfg.w_cross * d_anchor
        rows = np.concatenate([rows, cross])
        d_rows = np.concatenate([d_rows, cfg.w_cross * d_neg])

    opt.tick()
    opt.step_rows("input", state.input_table, rows, d_rows)
    for name, param in state.params.items():
        opt.step(name, param, grads[name])
    total = cfg.w_align * l_align + cfg.w_cross * l_cross + cfg.w_rec * l_rec
    _check(total, "total", view.block)
    return {"align": l_align, "cross": l_cross, "rec": l_rec, "total": total}


@dataclass
class EpochLog:
    epoch: int
    loss: float
    valid_hits1: float | None
    terms: dict[str, float] = field(default_factory=dict)


def train(
    subgraphs: Sequence[Subgraph],
    merged: MergedGraph,
    align: AlignmentSet,
    cfg: TrainConfig,
    history: list[EpochLog] | None = None,
) -> EmbeddingState:
    """Train the shared embedding state; returns the best-validation state.

    Per-subgraph outputs of the returned state are filled for every epoch
    count except 0, where the freshly initialised state is returned as is.
    """
    if not subgraphs:
        raise ValueError("no subgraphs to train on")
    n_rel = merged.joint.num_relations
    state = EmbeddingState.init(merged.num_nodes, n_rel, cfg.dim, cfg.n_proxies, cfg.seed, cfg.n_layers)
    if cfg.epochs == 0:
        return state
    if not align.train:
        raise ValueError("training needs at least one train pair")

    views = [make_view(s, merged) for s in subgraphs]
    anchors = [_train_anchors(v, merged, align.train) for v in views]
    for v, (u, _) in zip(views, anchors):
        if len(u) == 0:
            warnings.warn(f"subgraph {v.block} holds no train pair; alignment term is 0", RuntimeWarning, stacklevel=2)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = _Adam(cfg.lr)
    best, best_score = None, -np.inf

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(views))
        totals = {"align": 0.0, "cross": 0.0, "rec": 0.0, "total": 0.0}
        for i in order.tolist():
            cross = sample_cross(views[i].nodes, merged.num_nodes, cfg.n_cross, rng)
            terms = train_step(views[i], state, anchors[i], cross, cfg, opt)
            for key in totals:
                totals[key] += terms[key]
        score = None
        if align.valid:
            score = validation_hits1(subgraphs, views, state, merged, align.valid)
            if score > best_score:
                best_score, best = score, state.copy()
        LOGGER.info("epoch %d loss %.4f valid hits@1 %s", epoch + 1, totals["total"], score)
        if history is not None:
            history.append(EpochLog(epoch + 1, totals["total"], score, totals))

    final = best if best is not None else state
    return encode_all(views, final)


__all__ = [
    "EpochLog",
    "NegativeBatch",
    "TrainConfig",
    "encode_all",
    "make_view",
    "sample_cross",
    "train",
    "train_step",
    "validation_hits1",
]
