"""Relation-aware neighbourhood encoder with proxy attention, forward and backward in numpy.

Per node ``i`` of a subgraph, with ``h^0 = x`` and layers ``l = 1..L``:

    agg^l_i = (h^{l-1}_i + sum_{(j, r) in N_i} (h^{l-1}_j + rel_r)) / (1 + |N_i|)
    h^l     = tanh(agg^l @ W_l)
    h       = sum_l h^l
    a       = softmax(h @ P.T)          # attention over proxy vectors
    c     = a @ P
    g     = sigmoid((h - c) @ Wg + bg)  # gate between h and the proxy residual
    z     = g * h + (1 - g) * (h - c)
    out   = z / |z|

Messages only travel along triples of the subgraph itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .partition import Subgraph


@dataclass
class EncoderParams:
    rel: np.ndarray
    layers: np.ndarray  # (L, d, d)
    wg: np.ndarray
    bg: np.ndarray
    proxies: np.ndarray

    NAMES = ("rel", "layers", "wg", "bg", "proxies")

    @classmethod
    def init(
        cls, n_relations: int, dim: int, n_proxies: int, rng: np.random.Generator, n_layers: int = 2
    ) -> "EncoderParams":
        if n_layers < 1:
            raise ValueError("the encoder needs at least one aggregation layer")
        scale = 1.0 / np.sqrt(dim)
        glorot = np.sqrt(6.0 / (2 * dim))
        return cls(
            rel=rng.uniform(-scale, scale, (n_relations, dim)),
            layers=rng.uniform(-glorot, glorot, (n_layers, dim, dim)),
            wg=rng.uniform(-glorot, glorot, (dim, dim)),
            bg=np.zeros(dim),
            proxies=rng.uniform(-scale, scale, (n_proxies, dim)),
        )

    def items(self):
        return [(name, getattr(self, name)) for name in self.NAMES]

    def copy(self) -> "EncoderParams":
        return EncoderParams(*(getattr(self, n).copy() for n in self.NAMES))


@dataclass
class EmbeddingState:
    """Shared input table, encoder parameters and the last per-subgraph outputs."""

    input_table: np.ndarray
    params: EncoderParams
    per_subgraph_output: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(
        cls, n_nodes: int, n_relations: int, dim: int, n_proxies: int, seed: int, n_layers: int = 2
    ) -> "EmbeddingState":
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(dim)
        table = rng.uniform(-scale, scale, (n_nodes, dim))
        return cls(table, EncoderParams.init(n_relations, dim, n_proxies, rng, n_layers))

    @property
    def dim(self) -> int:
        return self.input_table.shape[1]

    @property
    def proxies(self) -> np.ndarray:
        return self.params.proxies

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(
            self.input_table.copy(), self.params.copy(), [o.copy() for o in self.per_subgraph_output]
        )


class SubgraphView:
    """Local indexing of one subgraph with the sparse operators the encoder needs.

    Joint nodes are indexed ``0..m-1`` in ``nodes`` order. The encoder works
    on *rows*: by default one row per joint node. When ``sides`` is given as
    ``(source_mask, target_mask, n_source_relations)`` over joint node ids,
    a merged seed gets one row per side instead, each aggregating only the
    triples of its own KG, while both rows read the same input vector.
    """

    def __init__(self, s: Subgraph, n_relations: int, sides: tuple | None = None):
        self.block = s.block
        self.nodes = s.nodes
        m = len(self.nodes)
        self.m = m
        if len(s.triples):
            h = np.searchsorted(self.nodes, s.triples[:, 0])
            t = np.searchsorted(self.nodes, s.triples[:, 2])
            r = s.triples[:, 1]
        else:
            h = t = r = np.empty(0, dtype=np.int64)

        if sides is None:
            self.row_node = np.arange(m, dtype=np.int64)
            self.src_row = self.tgt_row = self.row_node
        else:
            src_mask, tgt_mask, n_src_rel = sides
            is_src = np.asarray(src_mask)[self.nodes]
            is_tgt = np.asarray(tgt_mask)[self.nodes]
            n_rows = is_src.astype(np.int64) + is_tgt
            if np.any(n_rows == 0):
                raise ValueError("every joint node must belong to at least one side")
            first = np.concatenate([[0], np.cumsum(n_rows)[:-1]])
            self.row_node = np.repeat(np.arange(m, dtype=np.int64), n_rows)
            self.src_row = np.where(is_src, first, -1)
            self.tgt_row = np.where(is_tgt, first + is_src, -1)
            tgt_side = r >= n_src_rel
            h = np.where(tgt_side, self.tgt_row[h], self.src_row[h])
            t = np.where(tgt_side, self.tgt_row[t], self.src_row[t])
        n_r = len(self.row_node)
        self.n_rows = n_r

        recv = np.concatenate([h, t])
        send = np.concatenate([t, h])
        rel = np.concatenate([r, r])
        ones = np.ones(len(recv))
        self.msg = sp.csr_matrix((ones, (recv, send)), shape=(n_r, n_r))
        self.msg_t = self.msg.T.tocsr()
        self.relmsg = sp.csr_matrix((ones, (recv, rel)), shape=(n_r, n_relations))
        self.relmsg_t = self.relmsg.T.tocsr()
        self.inv_deg = 1.0 / (1.0 + np.bincount(recv, minlength=n_r))
        # rows -> joint nodes: sum (for input gradients) and mean (for outputs)
        gather = sp.csr_matrix((np.ones(n_r), (self.row_node, np.arange(n_r))), shape=(m, n_r))
        self.scatter = gather
        self.pool = sp.diags(1.0 / np.maximum(np.bincount(self.row_node, minlength=m), 1)) @ gather

        # undirected neighbour sets (no multiplicity) for reconstruction
        nb = sp.csr_matrix((ones, (recv, send)), shape=(n_r, n_r))
        nb.sum_duplicates()
        nb = nb.tocoo()
        self.nb_i = nb.row.astype(np.int64)
        self.nb_j = nb.col.astype(np.int64)
        n_nb = np.bincount(self.nb_i, minlength=n_r)
        self.nb_coef = 1.0 / np.maximum(n_nb[self.nb_i], 1)
        e = len(self.nb_i)
        self.inc_i = sp.csr_matrix((np.ones(e), (self.nb_i, np.arange(e))), shape=(n_r, e))
        self.inc_j = sp.csr_matrix((np.ones(e), (self.nb_j, np.arange(e))), shape=(n_r, e))

    def local(self, nodes: np.ndarray) -> np.ndarray:
        """Local indices of global node ids (which must belong to the subgraph)."""
        idx = np.searchsorted(self.nodes, nodes)
        if np.any(idx >= self.m) or np.any(self.nodes[np.minimum(idx, self.m - 1)] != nodes):
            raise KeyError("node not in subgraph")
        return idx

    def joint_output(self, out: np.ndarray) -> np.ndarray:
        """Per-joint-node outputs: the renormalised mean of the node's rows."""
        if self.n_rows == self.m:
            return out
        z = np.asarray(self.pool @ out)
        return z / np.linalg.norm(z, axis=1, keepdims=True)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def encode(view: SubgraphView, state: EmbeddingState, keep_cache: bool = False):
    """Unit-norm output embeddings, one per encoder row of ``view``."""
    if state.input_table is None or state.input_table.shape[0] == 0:
        raise RuntimeError("embedding state is not initialised")
    if view.n_rows == 0:
        raise ValueError("cannot encode an empty subgraph")
    p = state.params
    xs = state.input_table[view.nodes][view.row_node]
    prop = view.relmsg @ p.rel
    prev, h = xs, None
    layers = []
    for w in p.layers:
        agg = view.inv_deg[:, None] * (prev + view.msg @ prev + prop)
        prev = np.tanh(agg @ w)
        layers.append((agg, prev))
        h = prev if h is None else h + prev
    logits = h @ p.proxies.T
    logits -= logits.max(axis=1, keepdims=True)
    att = np.exp(logits)
    att /= att.sum(axis=1, keepdims=True)
    c = att @ p.proxies
    f = h - c
    g = _sigmoid(f @ p.wg + p.bg)
    z = h - (1.0 - g) * c
    norm = np.linalg.norm(z, axis=1)
    out = z / norm[:, None]
    if not keep_cache:
        return out
    return out, (layers, h, att, c, f, g, norm, out)


def backward(view: SubgraphView, state: EmbeddingState, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given ``dout = dL/d out``.

    ``dout`` is per encoder row. Returns ``x`` (rows aligned with
    ``view.nodes``) and one entry per encoder parameter.
    """
    layers, h, att, c, f, g, norm, out = cache
    p = state.params
    dz = (dout - out * np.sum(dout * out, axis=1, keepdims=True)) / norm[:, None]
    dh = dz.copy()
    dc = -(1.0 - g) * dz
    dgp = c * dz * g * (1.0 - g)
    d_wg = f.T @ dgp
    d_bg = dgp.sum(axis=0)
    df = dgp @ p.wg.T
    dh += df
    dc -= df
    datt = dc @ p.proxies.T
    d_prox = att.T @ dc
    dlogit = att * (datt - np.sum(datt * att, axis=1, keepdims=True))
    dh += dlogit @ p.proxies
    d_prox += dlogit.T @ h
    d_layers = np.empty_like(p.layers)
    d_rel = np.zeros_like(p.rel)
    dprev = np.zeros_like(h)
    for l in range(len(layers) - 1, -1, -1):
        agg, hl = layers[l]
        dpre = (dh + dprev) * (1.0 - hl * hl)
        d_layers[l] = agg.T @ dpre
        t = view.inv_deg[:, None] * (dpre @ p.layers[l].T)
        dprev = t + view.msg_t @ t
        d_rel += view.relmsg_t @ t
    dx = view.scatter @ dprev
    return {"x": dx, "rel": d_rel, "layers": d_layers, "wg": d_wg, "bg": d_bg, "proxies": d_prox}


__all__ = ["EmbeddingState", "EncoderParams", "SubgraphView", "backward", "encode"]
