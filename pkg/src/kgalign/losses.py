"""Alignment, cross-subgraph negative and reconstruction losses with analytic gradients.

Every ``log(1 + sum(exp(.)))`` is evaluated with a max shift, in row
chunks, so no anchor-by-node similarity matrix is ever fully materialised.
"""

from __future__ import annotations

import numpy as np

from .encoder import SubgraphView

# elements per similarity chunk
_CHUNK_ELEMS = 1 << 22


def similarity_out(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of two unit-norm output embeddings."""
    return float(np.dot(a, b))


def _chunks(n_rows: int, n_cols: int):
    step = max(1, _CHUNK_ELEMS // max(n_cols, 1))
    for lo in range(0, n_rows, step):
        yield lo, min(lo + step, n_rows)


def _lse(t: np.ndarray) -> float:
    """log(sum(exp(t))) over all finite entries; -inf for none."""
    mx = np.max(t) if t.size else -np.inf
    if not np.isfinite(mx):
        return -np.inf
    return float(mx + np.log(np.sum(np.exp(t - mx))))


def _log1p_sum(lse: float) -> float:
    return float(np.logaddexp(0.0, lse))


def _align_terms(out, u, v, lo, hi, alpha, beta, sign):
    uc, vc = u[lo:hi], v[lo:hi]
    sim = out[uc] @ out.T
    pos = np.sum(out[uc] * out[vc], axis=1)
    if sign > 0:  # literal: margin + pos - neg
        t = alpha * (beta + pos[:, None] - sim)
    else:  # log(1 + sum exp(alpha * (margin + neg - pos)))
        t = alpha * (beta - pos[:, None] + sim)
    rows = np.arange(hi - lo)
    t[rows, uc] = -np.inf
    t[rows, vc] = -np.inf
    return uc, vc, t


def loss_align(
    out: np.ndarray,
    u: np.ndarray,
    v: np.ndarray,
    alpha: float,
    beta: float,
    form: str = "literal",
) -> tuple[float, np.ndarray]:
    """In-batch alignment loss over anchor pairs ``(u[r], v[r])`` (local indices).

    Negatives of an anchor are all other nodes of the batch except ``u[r]``
    and ``v[r]``. ``form="literal"`` evaluates

        -log(1 + sum_r sum_j exp(alpha * (beta + pi(u, v) - pi(u, j))))

    ``form="dual"`` is the per-anchor mean of
    ``log(1 + sum_j exp(alpha * (beta - pi(u, v) + pi(u, j))))``.
    Returns the value and ``dL/d out``.
    """
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    dout = np.zeros_like(out)
    if len(u) == 0:
        return 0.0, dout
    m = out.shape[0]

    if form == "literal":
        total = -np.inf
        for lo, hi in _chunks(len(u), m):
            _, _, t = _align_terms(out, u, v, lo, hi, alpha, beta, +1)
            total = np.logaddexp(total, _lse(t))
        norm = _log1p_sum(total)
        for lo, hi in _chunks(len(u), m):
            uc, vc, t = _align_terms(out, u, v, lo, hi, alpha, beta, +1)
            w = np.exp(t - norm)
            # dL/dt = -w ; t = alpha * (beta + pos - sim)
            d_sim = alpha * w
            d_pos = -alpha * w.sum(axis=1)
            _scatter_align(out, dout, uc, vc, d_sim, d_pos)
        return -norm, dout

    if form == "dual":
        value = 0.0
        n_anchor = len(u)
        for lo, hi in _chunks(len(u), m):
            uc, vc, t = _align_terms(out, u, v, lo, hi, alpha, beta, -1)
            mx = np.maximum(t.max(axis=1), 0.0)
            ex = np.exp(t - mx[:, None])
            denom = np.exp(-mx) + ex.sum(axis=1)
            value += float(np.sum(mx + np.log(denom)))
            w = ex / denom[:, None]
            d_sim = alpha * w / n_anchor
            d_pos = -alpha * w.sum(axis=1) / n_anchor
            _scatter_align(out, dout, uc, vc, d_sim, d_pos)
        return value / n_anchor, dout

    raise ValueError(f"unknown alignment loss form {form!r}")


def _scatter_align(out, dout, uc, vc, d_sim, d_pos):
    # sim[r, j] = out[uc[r]] . out[j] ; pos[r] = out[uc[r]] . out[vc[r]]
    np.add.at(dout, uc, d_sim @ out + d_pos[:, None] * out[vc])
    dout += d_sim.T @ out[uc]
    np.add.at(dout, vc, d_pos[:, None] * out[uc])


def _normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(x, axis=1)
    return x / n[:, None], n


def loss_cross(
    x_anchor: np.ndarray, x_neg: np.ndarray, form: str = "literal", alpha: float = 1.0
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cross-subgraph negative loss on unit-normalised input rows.

    ``form="literal"`` evaluates ``-log(1 + sum_i sum_j exp(-pi(i, j)))``;
    ``form="dual"`` evaluates ``log(1 + sum_i sum_j exp(alpha * pi(i, j)))``,
    which weights the most similar negatives highest. Returns the value and
    gradients with respect to the raw anchor and negative input rows.
    """
    if form == "literal":
        scale, sign = -1.0, -1.0
    elif form == "dual":
        scale, sign = alpha, 1.0
    else:
        raise ValueError(f"unknown cross loss form {form!r}")
    d_anchor = np.zeros_like(x_anchor)
    d_neg = np.zeros_like(x_neg)
    if len(x_anchor) == 0 or len(x_neg) == 0:
        return 0.0, d_anchor, d_neg
    ua, na = _normalize(x_anchor)
    un, nn = _normalize(x_neg)
    total = -np.inf
    for lo, hi in _chunks(len(ua), len(un)):
        total = np.logaddexp(total, _lse(scale * (ua[lo:hi] @ un.T)))
    norm = _log1p_sum(total)
    du_a = np.zeros_like(ua)
    du_n = np.zeros_like(un)
    for lo, hi in _chunks(len(ua), len(un)):
        # dL/dpi = sign * scale * exp(scale * pi - norm)
        w = (sign * scale) * np.exp(scale * (ua[lo:hi] @ un.T) - norm)
        du_a[lo:hi] = w @ un
        du_n += w.T @ ua[lo:hi]
    d_anchor = (du_a - ua * np.sum(du_a * ua, axis=1, keepdims=True)) / na[:, None]
    d_neg = (du_n - un * np.sum(du_n * un, axis=1, keepdims=True)) / nn[:, None]
    return sign * norm, d_anchor, d_neg


def loss_reconstruct(view: SubgraphView, out: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean Euclidean distance of each node to its in-subgraph neighbours, summed over nodes."""
    if len(view.nb_i) == 0:
        return 0.0, np.zeros_like(out)
    diff = out[view.nb_i] - out[view.nb_j]
    dist = np.linalg.norm(diff, axis=1)
    value = float(np.sum(view.nb_coef * dist))
    safe = np.where(dist > 1e-12, dist, 1.0)
    g = np.where(dist[:, None] > 1e-12, diff * (view.nb_coef / safe)[:, None], 0.0)
    dout = view.inc_i @ g - view.inc_j @ g
    return value, np.asarray(dout)


__all__ = ["loss_align", "loss_cross", "loss_reconstruct", "similarity_out"]
