"""Stage runner: every stage reads its inputs from and writes its artifacts to the output directory.

Stages, in order: ``synth`` (only without a dataset), ``partition``,
``landmarks``, ``train``, ``infer``, ``eval``. Running them one by one
produces the same files as ``run_pipeline``.
"""

from __future__ import annotations

import logging
import resource
import time
import tracemalloc
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, derive_seed, write_config
from .inference import FusedSpace, fuse, mutual_knn, read_predictions, write_predictions
from .kg import (
    AlignmentSet,
    KnowledgeGraph,
    generate_synthetic_pair,
    read_links,
    read_triples,
    split_alignment,
    write_dataset,
    write_split_files,
)
from .landmark import attach_landmarks, generate_subgraphs, score_nodes, write_landmarks, read_landmarks
from .metrics import MetricsReport, evaluate_ideal, evaluate_real, write_metrics
from .partition import (
    MergedGraph,
    Subgraph,
    merge_graphs,
    partition,
    preserved_alignment_recall,
    read_partition,
    write_partition,
)
from .train import encode_all, make_view, train

LOGGER = logging.getLogger(__name__)

STAGES = ("synth", "partition", "landmarks", "train", "infer", "eval")

# artifact names inside the output directory
DATA_DIR = "data"
PARTITION_FILE = "partition.tsv"
PARTITION_REPORT = "partition_report.txt"
LANDMARK_FILE = "landmarks.tsv"
CHECKPOINT_FILE = "model.ckpt"
TRAIN_LOG = "train_log.tsv"
FUSED_FILE = "fused.npz"
PREDICTION_FILE = "predictions.tsv"
METRICS_FILE = "metrics.txt"
STATS_FILE = "stage_stats.tsv"
CONFIG_FILE = "config.txt"

# stages whose peak memory is taken from the allocator high-water mark
_TRACED = {"train", "infer"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class StageStats:
    stage: str
    seconds: float
    peak_bytes: int
    measure: str


@contextmanager
def _measure(stage: str, sink: list):
    traced = stage in _TRACED
    if traced:
        tracemalloc.start()
    t0 = time.perf_counter()
    try:
        yield
    finally:
        seconds = time.perf_counter() - t0
        if traced:
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            sink.append(StageStats(stage, seconds, int(peak), "tracemalloc"))
        else:
            peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
            sink.append(StageStats(stage, seconds, int(peak), "maxrss"))


def _record(out: Path, stats: StageStats) -> None:
    path = out / STATS_FILE
    rows = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            parts = line.split("\t")
            if len(parts) == 4:
                rows[parts[0]] = line
    rows[stats.stage] = f"{stats.stage}\t{stats.seconds:.3f}\t{stats.peak_bytes}\t{stats.measure}"
    ordered = [rows[s] for s in STAGES if s in rows]
    path.write_text("\n".join(ordered) + "\n", encoding="utf-8")
    LOGGER.info("stage %s: %.2f s, peak %d bytes (%s)", stats.stage, stats.seconds, stats.peak_bytes, stats.measure)


def read_stage_stats(out: str | Path) -> dict[str, StageStats]:
    path = Path(out) / STATS_FILE
    result = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            s, sec, peak, how = line.split("\t")
            result[s] = StageStats(s, float(sec), int(peak), how)
    return result


# ---------------------------------------------------------------- artifacts


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{stage} needs {path}, which does not exist; run the earlier stages first")
    return path


def dataset_dir(cfg: PipelineConfig) -> Path:
    return Path(cfg.dataset) if cfg.dataset else Path(cfg.out) / DATA_DIR


def _load_graphs(cfg: PipelineConfig, stage: str) -> tuple[KnowledgeGraph, KnowledgeGraph]:
    d = dataset_dir(cfg)
    g1 = read_triples(_require(d / "rel_triples_1", stage))
    g2 = read_triples(_require(d / "rel_triples_2", stage))
    return g1, g2


def _load_split(cfg: PipelineConfig, g1, g2, stage: str) -> AlignmentSet:
    out = Path(cfg.out)
    return AlignmentSet(
        set(read_links(_require(out / "train_links", stage), g1, g2)),
        set(read_links(_require(out / "valid_links", stage), g1, g2)),
        set(read_links(_require(out / "test_links", stage), g1, g2)),
    )


@dataclass
class _Context:
    g1: KnowledgeGraph
    g2: KnowledgeGraph
    align: AlignmentSet
    merged: MergedGraph


def _context(cfg: PipelineConfig, stage: str) -> _Context:
    g1, g2 = _load_graphs(cfg, stage)
    align = _load_split(cfg, g1, g2, stage)
    return _Context(g1, g2, align, merge_graphs(g1, g2, align.train))


def _subgraphs(cfg: PipelineConfig, ctx: _Context, stage: str) -> list[Subgraph]:
    p = read_partition(_require(Path(cfg.out) / PARTITION_FILE, stage))
    if len(p.assignment) != ctx.merged.num_nodes:
        raise ValueError("partition file does not match the merged graph")
    landmarks = read_landmarks(_require(Path(cfg.out) / LANDMARK_FILE, stage))
    return attach_landmarks(ctx.merged, p, landmarks)


def _search_candidates(ctx: _Context) -> tuple[np.ndarray, np.ndarray]:
    """Entities outside the train and valid pairs."""
    used = ctx.align.train | ctx.align.valid
    src = np.setdiff1d(np.arange(ctx.g1.num_entities), [a for a, _ in used])
    tgt = np.setdiff1d(np.arange(ctx.g2.num_entities), [b for _, b in used])
    return src, tgt


# ------------------------------------------------------------------- stages


def _stage_synth(cfg: PipelineConfig) -> Path:
    if cfg.dataset:
        raise ValueError("synth writes a generated dataset; unset 'dataset' to use it")
    g1, g2, gold = generate_synthetic_pair(
        cfg.synth_entities, cfg.synth_relations, cfg.synth_degree, cfg.synth_overlap,
        derive_seed(cfg.seed, "synth"),
    )
    d = dataset_dir(cfg)
    write_dataset(d, g1, g2, gold.test)
    return d


def _stage_partition(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out)
    g1, g2 = _load_graphs(cfg, "partition")
    links = read_links(_require(dataset_dir(cfg) / "ent_links", "partition"), g1, g2)
    align = split_alignment(links, (cfg.split_train, cfg.split_valid), derive_seed(cfg.seed, "split"))
    write_split_files(out, g1, g2, align)
    m = merge_graphs(g1, g2, align.train)
    p = partition(m, cfg.n_partitions, cfg.epsilon, derive_seed(cfg.seed, "partition"))
    write_partition(p, out / PARTITION_FILE)
    report = [
        f"n_blocks={p.n}",
        f"joint_nodes={m.num_nodes}",
        f"cut_edges={p.cut_edges}",
        "block_sizes=" + ",".join(str(int(x)) for x in p.block_sizes()),
    ]
    for name in ("train", "valid", "test"):
        report.append(f"recall_{name}={preserved_alignment_recall(p, m, getattr(align, name)):.6f}")
    (out / PARTITION_REPORT).write_text("\n".join(report) + "\n", encoding="utf-8")
    return out / PARTITION_FILE


def _stage_landmarks(cfg: PipelineConfig) -> Path:
    ctx = _context(cfg, "landmarks")
    p = read_partition(_require(Path(cfg.out) / PARTITION_FILE, "landmarks"))
    scores = score_nodes(ctx.merged, cfg.eta, cfg.floor)
    _, sets = generate_subgraphs(ctx.merged, p, scores, cfg.budget, cfg.lam)
    path = Path(cfg.out) / LANDMARK_FILE
    write_landmarks(sets, path)
    return path


def _stage_train(cfg: PipelineConfig) -> Path:
    ctx = _context(cfg, "train")
    subgraphs = _subgraphs(cfg, ctx, "train")
    history: list = []
    state = train(subgraphs, ctx.merged, ctx.align, cfg.train_config(derive_seed(cfg.seed, "train")), history)
    out = Path(cfg.out)
    save_checkpoint(state, out / CHECKPOINT_FILE)
    lines = ["epoch\tloss\talign\tcross\trec\tvalid_hits1"]
    for e in history:
        hv = "" if e.valid_hits1 is None else f"{e.valid_hits1:.6f}"
        lines.append(
            f"{e.epoch}\t{e.loss:.6f}\t{e.terms['align']:.6f}\t{e.terms['cross']:.6f}\t{e.terms['rec']:.6f}\t{hv}"
        )
    (out / TRAIN_LOG).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out / CHECKPOINT_FILE


def _stage_infer(cfg: PipelineConfig) -> Path:
    ctx = _context(cfg, "infer")
    subgraphs = _subgraphs(cfg, ctx, "infer")
    out = Path(cfg.out)
    state = load_checkpoint(
        _require(out / CHECKPOINT_FILE, "infer"), ctx.merged.joint.num_relations, cfg.n_proxies, cfg.n_layers
    )
    if state.input_table.shape[0] != ctx.merged.num_nodes:
        raise ValueError("checkpoint does not match the merged graph")
    encode_all([make_view(s, ctx.merged) for s in subgraphs], state)
    space = fuse(subgraphs, state, ctx.merged)
    np.savez(out / FUSED_FILE, source=space.source, target=space.target)
    src, tgt = _search_candidates(ctx)
    pred = mutual_knn(
        space, cfg.infer_k, cfg.search_mode, cfg.one_to_one,
        cfg.n_lists or None, cfg.n_probe or None, derive_seed(cfg.seed, "infer"),
        sources=src, targets=tgt,
    )
    write_predictions(pred, out / PREDICTION_FILE, ctx.g1, ctx.g2)
    return out / PREDICTION_FILE


def _stage_eval(cfg: PipelineConfig) -> MetricsReport:
    out = Path(cfg.out)
    g1, g2 = _load_graphs(cfg, "eval")
    align = _load_split(cfg, g1, g2, "eval")
    pred = read_predictions(_require(out / PREDICTION_FILE, "eval"), g1, g2)
    with np.load(_require(out / FUSED_FILE, "eval")) as z:
        space = FusedSpace(z["source"], z["target"])
    report = MetricsReport()
    report.precision, report.recall, report.f1 = evaluate_real(pred, align.test)
    if align.test:
        report.hits_at, report.mrr = evaluate_ideal(space, align.test, (1, 5))
    else:
        report.hits_at = {1: 0.0, 5: 0.0}
    stats = read_stage_stats(out)
    report.runtime_seconds = sum(s.seconds for s in stats.values() if s.stage != "eval")
    traced = [s.peak_bytes for s in stats.values() if s.measure == "tracemalloc"]
    report.peak_memory_bytes = max(traced) if traced else 0
    write_metrics(report, out / METRICS_FILE, cfg.resolved())
    return report


_RUNNERS = {
    "synth": _stage_synth,
    "partition": _stage_partition,
    "landmarks": _stage_landmarks,
    "train": _stage_train,
    "infer": _stage_infer,
    "eval": _stage_eval,
}


def run_stage(cfg: PipelineConfig, stage: str):
    """Run one stage from the artifacts already in ``cfg.out``; returns its main artifact."""
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / CONFIG_FILE)
    stats: list[StageStats] = []
    try:
        with _measure(stage, stats):
            result = _RUNNERS[stage](cfg)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    _record(out, stats[0])
    return result


def run_pipeline(cfg: PipelineConfig) -> MetricsReport:
    stages = STAGES if not cfg.dataset else STAGES[1:]
    result = None
    for stage in stages:
        result = run_stage(cfg, stage)
    return result


__all__ = ["STAGES", "StageError", "StageStats", "read_stage_stats", "run_pipeline", "run_stage"]
