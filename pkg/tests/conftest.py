from __future__ import annotations

import numpy as np
import pytest

from kgalign.kg import KnowledgeGraph


def make_graph(n: int, edges, n_relations: int = 1, prefix: str = "e") -> KnowledgeGraph:
    """Graph on ``n`` entities from ``(head, tail)`` or ``(head, rel, tail)`` tuples."""
    rows = [(e[0], 0, e[1]) if len(e) == 2 else tuple(e) for e in edges]
    return KnowledgeGraph(
        [f"{prefix}{i}" for i in range(n)],
        [f"r{i}" for i in range(n_relations)],
        np.array(rows, dtype=np.int64).reshape(-1, 3),
    )


def path_edges(n: int):
    return [(i, i + 1) for i in range(n - 1)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
