"""Real-setting (precision/recall/F1) and ideal-setting (Hits@k, MRR) evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .inference import AlignmentPrediction, FusedSpace

_BLOCK_ELEMS = 1 << 22


@dataclass
class MetricsReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    hits_at: dict[int, float] = field(default_factory=dict)
    mrr: float = 0.0
    runtime_seconds: float = 0.0
    peak_memory_bytes: int = 0

    def as_items(self) -> list[tuple[str, str]]:
        items = [
            ("precision", f"{self.precision:.6f}"),
            ("recall", f"{self.recall:.6f}"),
            ("f1", f"{self.f1:.6f}"),
        ]
        for k in sorted(self.hits_at):
            items.append((f"hits@{k}", f"{self.hits_at[k]:.6f}"))
        items += [
            ("mrr", f"{self.mrr:.6f}"),
            ("runtime_seconds", f"{self.runtime_seconds:.3f}"),
            ("peak_memory_bytes", str(int(self.peak_memory_bytes))),
        ]
        return items


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def evaluate_real(
    pred: AlignmentPrediction | Iterable[tuple[int, int]], gold_test: Iterable[tuple[int, int]]
) -> tuple[float, float, float]:
    predicted = pred.as_set() if isinstance(pred, AlignmentPrediction) else {tuple(p) for p in pred}
    gold = {tuple(p) for p in gold_test}
    if not predicted:
        p = 1.0 if not gold else 0.0
        return p, (1.0 if not gold else 0.0), (1.0 if not gold else 0.0)
    hit = len(predicted & gold)
    precision = hit / len(predicted)
    recall = hit / len(gold) if gold else 0.0
    return precision, recall, _f1(precision, recall)


def gold_ranks(space: FusedSpace, gold_test: Iterable[tuple[int, int]]) -> np.ndarray:
    """1-based rank of each gold target among all targets, ties to the lower index."""
    pairs = np.asarray(sorted({tuple(p) for p in gold_test}), dtype=np.int64).reshape(-1, 2)
    ranks = np.empty(len(pairs), dtype=np.int64)
    tgt = space.target
    step = max(1, _BLOCK_ELEMS // max(len(tgt), 1))
    cols = np.arange(len(tgt))
    for lo in range(0, len(pairs), step):
        a, b = pairs[lo : lo + step, 0], pairs[lo : lo + step, 1]
        sim = space.source[a] @ tgt.T
        gold_sim = sim[np.arange(len(a)), b][:, None]
        better = (sim > gold_sim) | ((sim == gold_sim) & (cols[None, :] < b[:, None]))
        ranks[lo : lo + step] = better.sum(axis=1) + 1
    return ranks


def evaluate_ideal(
    space: FusedSpace, gold_test: Iterable[tuple[int, int]], ks: Iterable[int] = (1, 5)
) -> tuple[dict[int, float], float]:
    gold = list(gold_test)
    if not gold:
        raise ValueError("ideal-setting evaluation needs at least one gold pair")
    ranks = gold_ranks(space, gold)
    hits = {int(k): float(np.mean(ranks <= k)) for k in sorted(set(ks))}
    return hits, float(np.mean(1.0 / ranks))


def write_metrics(
    report: MetricsReport, path: str | Path, config: Mapping[str, object] | None = None
) -> None:
    lines = [f"{k}={v}" for k, v in report.as_items()]
    for key in sorted(config or {}):
        lines.append(f"config.{key}={config[key]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key] = value
    return out


__all__ = [
    "MetricsReport",
    "evaluate_ideal",
    "evaluate_real",
    "gold_ranks",
    "read_metrics",
    "write_metrics",
]
