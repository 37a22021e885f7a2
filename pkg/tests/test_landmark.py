from __future__ import annotations

import numpy as np
import pytest

from kgalign.landmark import (
    BenefitQuery,
    Candidates,
    ScoreTable,
    benefit,
    candidate_set,
    generate_subgraphs,
    label_importance,
    label_influence,
    read_landmarks,
    score_nodes,
    select_landmarks,
    write_landmarks,
)
from kgalign.partition import Partition, Subgraph, induce_subgraphs, merge_graphs

from conftest import make_graph, path_edges
from landmark_reference import HAND_INSTANCES, adjacency_of, connected_to_core, reference_select

EMPTY = make_graph(0, [], prefix="f")


def _merged(n, edges):
    return merge_graphs(make_graph(n, edges), EMPTY, set())


def _core(nodes):
    nodes = np.asarray(sorted(nodes), dtype=np.int64)
    return Subgraph(0, nodes, np.empty(0, dtype=np.int64), np.empty((0, 3), dtype=np.int64))


def package_inputs(cands, lam=0.5):
    """Candidates and a score table reproducing the given benefits."""
    cands = sorted(cands)
    n = max(c[0] for c in cands) + 1
    influence = np.zeros(n)
    for node, hop, _, om in cands:
        influence[node] = om / lam**hop
    scores = ScoreTable(np.zeros(n), influence, 0.001, 0.49)
    c = Candidates(
        np.array([x[0] for x in cands], dtype=np.int64),
        np.array([x[1] for x in cands], dtype=np.int64),
        np.array([-1 if x[2] is None else x[2] for x in cands], dtype=np.int64),
    )
    return c, scores


def test_importance_values():
    m = _merged(5, path_edges(5))
    t = label_importance(m, [0], eta=0.001, floor=0.49)
    assert t.importance[0] == pytest.approx(1000.0)
    assert t.importance[1] == pytest.approx(1 / 1.001)
    assert t.importance[2] == pytest.approx(1 / 2.001)
    assert t.importance[2] == pytest.approx(0.49975, abs=1e-5)
    assert t.importance[3] == 0.0 and t.importance[4] == 0.0
    assert t.hops.tolist() == [0, 1, 2, -1, -1]


def test_importance_monotone_in_hops():
    m = _merged(12, path_edges(12))
    t = label_importance(m, [0], eta=0.5, floor=0.0)
    assert np.all(np.diff(t.importance) < 0)


def test_importance_without_seeds_warns():
    m = _merged(3, path_edges(3))
    with pytest.warns(RuntimeWarning):
        t = label_importance(m, [], 0.001, 0.49)
    assert not t.importance.any()


def test_influence_examples():
    # 3-node toy: centre 1 between a seed (0) and a hop-1 node of another seed
    m = _merged(4, [(0, 1), (1, 2), (2, 3)])
    t = ScoreTable(np.array([1000.0, 0.0, 0.999, 0.0]), np.zeros(4), 0.001, 0.49)
    assert label_influence(m, t).influence[1] == pytest.approx(1000.999)
    iso = _merged(3, [(0, 1)])
    t = label_influence(iso, label_importance(iso, [0]))
    assert t.influence[2] == 0.0
    zero = ScoreTable(np.zeros(3), np.zeros(3), 0.001, 0.49)
    assert not label_influence(iso, zero).influence.any()


def test_influence_matches_brute_force():
    rng = np.random.default_rng(0)
    edges = sorted({tuple(sorted(rng.choice(30, 2, replace=False).tolist())) for _ in range(60)})
    m = _merged(30, edges)
    t = label_influence(m, label_importance(m, [0, 7, 19]))
    nbrs = adjacency_of(edges)
    for v in range(30):
        assert t.influence[v] == sum(t.importance[w] for w in sorted(nbrs.get(v, ())))


def test_seed_nodes_get_maximal_importance():
    g1 = make_graph(4, path_edges(4))
    g2 = make_graph(4, path_edges(4), prefix="f")
    m = merge_graphs(g1, g2, {(0, 0), (3, 3)})
    t = score_nodes(m, eta=0.001)
    assert np.all(t.importance[m.seeds] == t.importance.max())


def test_candidate_set_examples():
    m = _merged(4, path_edges(4))
    c = candidate_set(_core([0]), m)
    assert c.as_set() == {(1, 1, None), (2, 2, 1)}
    star = _merged(6, [(0, i) for i in range(1, 6)])
    c = candidate_set(_core([0]), star)
    assert set(c.hop.tolist()) == {1} and len(c) == 5
    assert len(candidate_set(_core(range(4)), m)) == 0


def test_max_nei_takes_most_influential_neighbour():
    # 3 reaches the core through 1 or 2; 2 has the larger influence
    m = _merged(5, [(0, 1), (0, 2), (1, 3), (2, 3), (2, 4)])
    scores = ScoreTable(np.zeros(5), np.array([0, 1.0, 2.0, 0, 0]), 0.001, 0.49)
    c = candidate_set(_core([0]), m, scores)
    assert (3, 2, 2) in c.as_set() and (4, 2, 2) in c.as_set()


def test_benefit_examples():
    s = _core([0])
    q = BenefitQuery(s, 0.01, {5: 1, 6: 2, 7: 1})
    scores = ScoreTable(np.zeros(8), np.array([0, 0, 0, 0, 0, 2.0, 2.0, 0.0]), 0.001, 0.49)
    assert benefit(5, q, scores) == pytest.approx(0.02)
    assert benefit(6, q, scores) == pytest.approx(0.0002)
    assert benefit(7, q, scores) == 0.0
    with pytest.raises(KeyError):
        benefit(3, q, scores)


def test_select_trivial_cases():
    cands = [(i, 1, None, float(i)) for i in range(1, 5)]
    c, scores = package_inputs(cands)
    assert set(select_landmarks(_core([0]), c, scores, 10, lam=0.5).members.tolist()) == {1, 2, 3, 4}
    assert len(select_landmarks(_core([0]), c, scores, 0, lam=0.5)) == 0
    with pytest.raises(ValueError):
        select_landmarks(_core([0]), c, scores, -1)


@pytest.mark.parametrize("inst", HAND_INSTANCES, ids=lambda i: f"k{i['k']}-{len(i['cands'])}c")
def test_hand_instances_match_reference(inst):
    c, scores = package_inputs(inst["cands"])
    trace = []
    got = select_landmarks(_core([0]), c, scores, inst["k"], lam=0.5, trace=trace)
    members, log = reference_select(inst["cands"], inst["k"])
    assert set(got.members.tolist()) == members == inst["expected"]
    assert trace == log
    assert len(got) <= inst["k"]
    assert connected_to_core([0], got.members.tolist(), adjacency_of(inst["edges"]))


def test_greedy_dominance_on_hop1():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = 10
        cands = [(i, 1, None, float(rng.integers(0, 5))) for i in range(1, n)]
        cands += [(n + i, 2, int(rng.integers(1, n)), float(rng.integers(0, 20))) for i in range(5)]
        k = int(rng.integers(1, 8))
        c, scores = package_inputs(cands)
        trace = []
        ls = select_landmarks(_core([0]), c, scores, k, lam=0.5, trace=trace)
        chosen = set(ls.members.tolist())
        om = {x[0]: x[3] for x in cands}
        popped = {x for ev in trace if ev[0] == "pop" for x in ev[1:]}
        admitted = [om[x] for x in chosen if x < n and x not in popped]
        excluded = [om[x] for x in range(1, n) if x not in chosen]
        if admitted and excluded:
            assert max(excluded) <= min(admitted)


def test_generate_subgraphs_zero_budget_is_plain_induction():
    g1 = make_graph(12, path_edges(12))
    m = merge_graphs(g1, EMPTY, set())
    p = Partition(np.array([0] * 6 + [1] * 6), 2, 1)
    with pytest.warns(RuntimeWarning, match="no seed"):
        scores = score_nodes(m)
    subs, sets = generate_subgraphs(m, p, scores, 0)
    for a, b in zip(subs, induce_subgraphs(p, m)):
        assert np.array_equal(a.core_nodes, b.core_nodes)
        assert np.array_equal(a.triples, b.triples) and len(a.landmark_nodes) == 0
    assert all(len(s) == 0 for s in sets)


def test_generate_subgraphs_restores_cut_edges():
    # 12 nodes: two 6-cycles joined by the cut edges 2-8 and 5-11
    edges = [(i, (i + 1) % 6) for i in range(6)] + [(6 + i, 6 + (i + 1) % 6) for i in range(6)]
    edges += [(2, 8), (5, 11)]
    g1 = make_graph(12, edges)
    g2 = make_graph(12, edges, prefix="f")
    m = merge_graphs(g1, g2, {(i, i) for i in range(12)})
    p = Partition(np.array([0] * 6 + [1] * 6), 2, 4)
    subs, sets = generate_subgraphs(m, p, score_nodes(m), k=100, lam=0.5)
    assert set(sets[0].members.tolist()) == {6, 7, 8, 9, 10, 11}
    assert set(sets[1].members.tolist()) == {0, 1, 2, 3, 4, 5}
    for s in subs:
        # every original edge has both endpoints present, so all are restored
        assert len(s.triples) == m.triples.shape[0]
        assert not set(s.core_nodes.tolist()) & set(s.landmark_nodes.tolist())


def test_landmark_file_round_trip(tmp_path):
    g1 = make_graph(10, path_edges(10))
    m = merge_graphs(g1, EMPTY, set())
    p = Partition(np.array([0] * 5 + [1] * 5), 2, 1)
    m_scores = label_influence(m, label_importance(m, [0, 9]))
    _, sets = generate_subgraphs(m, p, m_scores, k=3)
    write_landmarks(sets, tmp_path / "l.tsv")
    line = (tmp_path / "l.tsv").read_text().splitlines()[0].split("\t")
    assert len(line) == 4 and len(line[3].split(".")[1]) == 6
    back = read_landmarks(tmp_path / "l.tsv")
    for b, ls in enumerate(sets):
        assert back.get(b, np.empty(0)).tolist() == ls.members.tolist()
