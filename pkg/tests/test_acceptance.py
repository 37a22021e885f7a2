"""Acceptance criteria A1-A9. Each test prints one PASS/FAIL line, then asserts."""

from __future__ import annotations

import gc
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from kgalign.config import PipelineConfig
from kgalign.inference import FusedSpace, mutual_knn
from kgalign.kg import generate_synthetic_pair, split_alignment
from kgalign.landmark import (
    Candidates,
    ScoreTable,
    candidate_set,
    label_importance,
    label_influence,
    select_landmarks,
)
from kgalign.metrics import read_metrics
from kgalign.partition import Subgraph, merge_graphs, partition, preserved_alignment_recall
from kgalign.pipeline import read_stage_stats, run_pipeline, run_stage

from conftest import make_graph
from gradcheck import all_loss_errors
from knn_oracle import mutual_pairs
from landmark_reference import HAND_INSTANCES, adjacency_of, connected_to_core, reference_select

EMPTY_IDX = np.empty(0, dtype=np.int64)


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n{name} {'PASS' if ok else 'FAIL'}: {detail}")


# ------------------------------------------------------------- A1 / A2 data


@pytest.fixture(scope="module")
def openea_like():
    g1, g2, gold = generate_synthetic_pair(15000, 20, 4.0, 1.0, seed=2024)
    align = split_alignment(sorted(gold.test), (0.3, 0.1), seed=2024)
    return g1, g2, align


def test_a1_train_pairs_preserved(capsys, openea_like):
    g1, g2, align = openea_like
    t0 = time.perf_counter()
    m = merge_graphs(g1, g2, align.train)
    recalls = {}
    for n in (2, 5, 10):
        p = partition(m, n, seed=0)
        recalls[n] = preserved_alignment_recall(p, m, align.train)
    seconds = time.perf_counter() - t0
    ok = all(r == 1.0 for r in recalls.values()) and seconds < 60
    report(capsys, "A1", ok, f"{g1.num_entities} entities/side, train recall {recalls}, {seconds:.1f} s")
    assert ok


def _independent_recall(g1, g2, align, n, seed):
    """Partition each KG on its own, pair blocks by seed overlap, score test pairs."""
    empty = make_graph(0, [], n_relations=0, prefix="x")
    p1 = partition(merge_graphs(g1, empty, set()), n, seed=seed).assignment
    p2 = partition(merge_graphs(g2, empty, set()), n, seed=seed + 1).assignment
    overlap = np.zeros((n, n), dtype=np.int64)
    for a, b in align.train:
        overlap[p1[a], p2[b]] += 1
    rows, cols = linear_sum_assignment(-overlap)
    partner = dict(zip(rows.tolist(), cols.tolist()))
    test = list(align.test)
    return float(np.mean([partner[p1[a]] == p2[b] for a, b in test]))


def test_a2_merged_partition_beats_independent(capsys, openea_like):
    g1, g2, align = openea_like
    t0 = time.perf_counter()
    m = merge_graphs(g1, g2, align.train)
    rows = {}
    for n in (2, 5, 10):
        merged = preserved_alignment_recall(partition(m, n, seed=0), m, align.test)
        rows[n] = (round(merged, 4), round(_independent_recall(g1, g2, align, n, seed=0), 4))
    seconds = time.perf_counter() - t0
    ok = all(a > b for a, b in rows.values()) and seconds < 120
    report(capsys, "A2", ok, f"test recall (merged, independent) {rows}, {seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------- A3 / A4


def _small_run(tmp_path, name, **kw):
    cfg = PipelineConfig(
        synth_entities=1000, synth_degree=4.0, n_partitions=2, budget=1000,
        dim=32, epochs=50, infer_k=5, out=str(tmp_path / name), **kw,
    )
    report_ = run_pipeline(cfg)
    return report_, cfg


def test_a3_end_to_end(capsys, tmp_path):
    t0 = time.perf_counter()
    rep, _ = _small_run(tmp_path, "a3", synth_overlap=1.0)
    seconds = time.perf_counter() - t0
    ok = rep.hits_at[1] >= 0.9 and rep.f1 >= 0.8 and seconds < 300
    report(capsys, "A3", ok, f"hits@1 {rep.hits_at[1]:.4f}, F1 {rep.f1:.4f}, {seconds:.1f} s")
    assert ok


def test_a4_auxiliary_losses_help(capsys, tmp_path):
    full, ablated = [], []
    for seed in (0, 1, 2):
        rep, _ = _small_run(tmp_path, f"full{seed}", synth_overlap=0.8, seed=seed)
        full.append(rep.hits_at[1])
        rep, _ = _small_run(tmp_path, f"abl{seed}", synth_overlap=0.8, seed=seed, w_cross=0.0, w_rec=0.0)
        ablated.append(rep.hits_at[1])
    gain = float(np.mean(full) - np.mean(ablated))
    ok = gain >= 0.005
    detail = (
        f"hits@1 full {np.round(full, 4).tolist()} vs w/o CNS&ER {np.round(ablated, 4).tolist()}, "
        f"mean gain {gain:+.4f} (need >= +0.005)"
    )
    report(capsys, "A4", ok, detail)
    assert ok


# ---------------------------------------------------------------------- A5


def _random_instance(rng):
    """Random graph whose subgraph has at most 12 candidates, with seed scores."""
    while True:
        n = int(rng.integers(8, 18))
        edges = {(i, int(rng.integers(0, i))) for i in range(1, n)}
        for _ in range(int(rng.integers(0, n))):
            a, b = rng.choice(n, 2, replace=False).tolist()
            edges.add((min(a, b), max(a, b)))
        g = make_graph(n, sorted(edges))
        m = merge_graphs(g, make_graph(0, [], n_relations=0, prefix="x"), set())
        core = np.sort(rng.choice(n, int(rng.integers(1, 4)), replace=False))
        s = Subgraph(0, core, EMPTY_IDX, np.empty((0, 3), dtype=np.int64))
        seeds = rng.choice(n, int(rng.integers(1, 4)), replace=False)
        scores = label_influence(m, label_importance(m, seeds, eta=0.5, floor=0.0))
        cands = candidate_set(s, m, scores)
        if 1 <= len(cands) <= 12:
            return s, m, sorted(edges), cands, scores


def _feasible_subsets(core, cand_nodes, adjacency, k):
    """All candidate subsets within budget satisfying the connectivity constraint."""
    feasible = set()
    nodes = list(cand_nodes)
    for mask in range(1 << len(nodes)):
        chosen = [nodes[i] for i in range(len(nodes)) if mask >> i & 1]
        if len(chosen) <= k and connected_to_core(core, chosen, adjacency):
            feasible.add(frozenset(chosen))
    return feasible


def test_a5_landmark_fidelity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    problems = []
    for trial in range(25):
        s, m, edges, cands, scores = _random_instance(rng)
        k = int(rng.integers(0, 6))
        lam = float(rng.choice([0.01, 0.5]))
        got = frozenset(select_landmarks(s, cands, scores, k, lam).members.tolist())
        feasible = _feasible_subsets(s.core_nodes.tolist(), cands.nodes.tolist(), adjacency_of(edges), k)
        listed = [
            (node, hop, None if nei < 0 else nei, scores.influence[node] * lam**hop)
            for node, hop, nei in zip(cands.nodes.tolist(), cands.hop.tolist(), cands.max_nei.tolist())
        ]
        if got not in feasible or got != reference_select(listed, k)[0]:
            problems.append(f"random#{trial}")
    for i, inst in enumerate(HAND_INSTANCES):
        cl = sorted(inst["cands"])
        lam = 0.5
        n = max(c[0] for c in cl) + 1
        influence = np.zeros(n)
        for node, hop, _, om in cl:
            influence[node] = om / lam**hop
        c = Candidates(
            np.array([x[0] for x in cl]), np.array([x[1] for x in cl]),
            np.array([-1 if x[2] is None else x[2] for x in cl]),
        )
        trace = []
        core = Subgraph(0, np.array([0]), EMPTY_IDX, np.empty((0, 3), dtype=np.int64))
        got = select_landmarks(core, c, ScoreTable(np.zeros(n), influence, 0.001, 0.49), inst["k"], lam, trace)
        members, log = reference_select(inst["cands"], inst["k"])
        if set(got.members.tolist()) != members or trace != log:
            problems.append(f"hand#{i}")
    seconds = time.perf_counter() - t0
    ok = not problems and seconds < 10
    report(capsys, "A5", ok, f"25 random + 5 hand instances, mismatches {problems or 'none'}, {seconds:.2f} s")
    assert ok


# ---------------------------------------------------------------------- A6


def test_a6_gradients(capsys):
    t0 = time.perf_counter()
    errors = all_loss_errors(dim=8, seed=0)
    worst = max(errors, key=errors.get)
    seconds = time.perf_counter() - t0
    ok = errors[worst] <= 1e-3 and seconds < 30
    report(capsys, "A6", ok, f"{len(errors)} gradient blocks, worst {worst} rel. error {errors[worst]:.2e}, {seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------------- A7


def test_a7_mutual_knn_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    mismatches = 0
    checked = 0
    for i in range(20):
        ns, nt = (500, 500) if i == 0 else (int(rng.integers(20, 501)), int(rng.integers(20, 501)))
        d = int(rng.integers(4, 33))
        src = rng.normal(size=(ns, d))
        tgt = rng.normal(size=(nt, d))
        space = FusedSpace(src / np.linalg.norm(src, axis=1, keepdims=True), tgt / np.linalg.norm(tgt, axis=1, keepdims=True))
        for k in (1, 5, 10):
            checked += 1
            if mutual_knn(space, k).as_set() != mutual_pairs(space.source.tolist(), space.target.tolist(), k):
                mismatches += 1
    seconds = time.perf_counter() - t0
    ok = mismatches == 0 and seconds < 30
    report(capsys, "A7", ok, f"{checked} (space, k) cases, {mismatches} mismatches, {seconds:.1f} s")
    assert ok


# ---------------------------------------------------------------------- A8


def test_a8_memory_scaling(capsys, tmp_path):
    t0 = time.perf_counter()
    base = dict(synth_entities=50000, dim=32, epochs=1, budget=10000)
    gen = PipelineConfig(**base, out=str(tmp_path / "gen"))
    run_stage(gen, "synth")
    peaks = {}
    for n in (1, 8):
        cfg = PipelineConfig(**base, n_partitions=n, dataset=str(tmp_path / "gen" / "data"), out=str(tmp_path / f"n{n}"))
        for stage in ("partition", "landmarks", "train"):
            run_stage(cfg, stage)
        peaks[n] = read_stage_stats(cfg.out)["train"].peak_bytes
    seconds = time.perf_counter() - t0
    ok = peaks[8] < peaks[1] and seconds < 1200
    detail = f"training peak n=1 {peaks[1] / 2**20:.0f} MiB, n=8 {peaks[8] / 2**20:.0f} MiB, {seconds:.0f} s"
    report(capsys, "A8", ok, detail)
    assert ok


# ---------------------------------------------------------------------- A9


def _timing_instance(n, rng):
    nodes = np.arange(n, dtype=np.int64)
    n1 = n // 3
    hop = np.where(nodes < n1, 1, 2).astype(np.int64)
    nei = np.where(hop == 2, rng.integers(0, n1, n), -1).astype(np.int64)
    scores = ScoreTable(np.zeros(n), rng.random(n), 0.001, 0.49)
    return Candidates(nodes, hop, nei), scores


def test_a9_landmark_complexity(capsys):
    rng = np.random.default_rng(9)
    core = Subgraph(0, EMPTY_IDX, EMPTY_IDX, np.empty((0, 3), dtype=np.int64))
    sizes = (10**3, 10**4, 10**5)
    medians = []
    gc_was = gc.isenabled()
    gc.disable()
    try:
        for n in sizes:
            cands, scores = _timing_instance(n, rng)
            select_landmarks(core, cands, scores, n // 2)  # warm-up
            runs = []
            for _ in range(7):
                t = time.perf_counter()
                select_landmarks(core, cands, scores, n // 2)
                runs.append(time.perf_counter() - t)
            medians.append(float(np.median(runs)))
    finally:
        if gc_was:
            gc.enable()
    x = np.array([n * np.log(n) for n in sizes])
    y = np.array(medians)
    c = float(np.mean(y / x))  # fit minimising relative residuals
    residuals = y / (c * x) - 1
    ok = bool(np.all(np.abs(residuals) <= 0.25))
    detail = ", ".join(f"n={n}: {t * 1e3:.2f} ms ({r:+.0%})" for n, t, r in zip(sizes, medians, residuals))
    report(capsys, "A9", ok, f"median times vs c*n*log n fit: {detail}")
    assert ok
