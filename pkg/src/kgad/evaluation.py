"""Ranking every triple by anomaly score and the detection metrics over that ranking."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corruption import LabeledCorpus, SealedLabels
from .encoders import param_dims
from .graph import KnowledgeGraph, mean_neighbor_count, neighbor_lists
from .model import NeighbourRows, corpus_table, forward
from .tensor import ParamStore

SCORING_SEED = 0x5C0E
K_PERCENTS = (1, 2, 3, 4, 5)
METRIC_KEYS = ("precision_at", "recall_at", "auc", "anomaly_mean_score", "clean_mean_score")


class MetricError(ValueError):
    pass


@dataclass
class RankedScores:
    """Triple ids sorted by descending score; ties broken by ascending id."""

    ids: np.ndarray
    scores: np.ndarray

    @classmethod
    def from_scores(cls, scores) -> "RankedScores":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 1:
            raise ValueError("scores must be a 1-d array indexed by triple id")
        if not np.isfinite(scores).all():
            raise MetricError("scores must be finite")
        ids = np.arange(scores.size)
        order = np.lexsort((ids, -scores))
        return cls(ids[order], scores[order])

    def __len__(self) -> int:
        return int(self.ids.size)

    def by_id(self) -> np.ndarray:
        """Scores re-indexed by triple id."""
        out = np.empty_like(self.scores)
        out[self.ids] = self.scores
        return out


def score_all(store: ParamStore, corpus: LabeledCorpus | KnowledgeGraph, m: int | None = None,
              alpha: float = 0.9, seed: int = SCORING_SEED, use_sigmoid: bool = False,
              chunk: int = 512) -> RankedScores:
    """Score every corpus triple with a trained model and rank the results.

    Neighbour lists are drawn from a generator seeded with ``seed`` alone, so
    the ranking is a function of the parameters and the corpus.
    """
    graph = corpus.graph if isinstance(corpus, LabeledCorpus) else corpus
    n_ent, n_rel, _ = param_dims(store)
    if (n_ent, n_rel) != (graph.n_entities, graph.n_relations):
        raise ValueError(
            f"model has {n_ent} entities / {n_rel} relations, corpus has "
            f"{graph.n_entities} / {graph.n_relations}"
        )
    m = m or mean_neighbor_count(graph)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C0E]))
    table_q, table_qp = corpus_table(store, graph.heads, graph.rels, graph.tails)
    p = store.frozen()
    # all lists are drawn up front so the chunk size cannot change the ranking
    every = np.arange(len(graph))
    head_idx = neighbor_lists(graph, graph.heads, every, every, m, rng, "head")
    tail_idx = neighbor_lists(graph, graph.tails, every, every, m, rng, "tail")
    scores = np.empty(len(graph))
    for start in range(0, len(graph), chunk):
        tid = every[start : start + chunk]
        h, r, t = graph.heads[tid], graph.rels[tid], graph.tails[tid]
        nbrs = NeighbourRows(head_idx=head_idx[tid], tail_idx=tail_idx[tid], head_keys=h, tail_keys=t)
        fw = forward(p, h, r, t, nbrs, table_q, table_qp, alpha, use_sigmoid)
        scores[tid] = fw.score.data
    return RankedScores.from_scores(scores)


def _labels(labels) -> np.ndarray:
    arr = labels.reveal() if isinstance(labels, SealedLabels) else np.asarray(labels)
    return arr.astype(bool)


def _top_k(n: int, k_fraction: float) -> int:
    if not 0.0 < k_fraction <= 1.0:
        raise MetricError(f"k_fraction must lie in (0, 1], got {k_fraction}")
    k = int(np.floor(k_fraction * n + 0.5))
    if k == 0:
        raise MetricError(f"top {k_fraction:.2%} of {n} triples rounds to zero")
    return k


def hits_at_k(ranked: RankedScores, labels, k_fraction: float) -> tuple[int, int]:
    """``(anomalies in the top K, K)``."""
    y = _labels(labels)
    k = _top_k(len(ranked), k_fraction)
    return int(y[ranked.ids[:k]].sum()), k


def precision_at_k(ranked: RankedScores, labels, k_fraction: float) -> float:
    hits, k = hits_at_k(ranked, labels, k_fraction)
    return hits / k


def recall_at_k(ranked: RankedScores, labels, k_fraction: float) -> float:
    y = _labels(labels)
    total = int(y.sum())
    if total == 0:
        raise MetricError("recall is undefined without anomalies")
    hits, _ = hits_at_k(ranked, y, k_fraction)
    return hits / total


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their mean rank."""
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    return ((ends - counts + 1 + ends) / 2.0)[inv]


def auc(ranked: RankedScores, labels) -> float:
    """ROC area of anomaly scores via the Mann-Whitney rank sum (ties count 1/2)."""
    y = _labels(labels)[ranked.ids]
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both anomalous and clean triples")
    ranks = _average_ranks(ranked.scores)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def run_metrics(ranked: RankedScores, labels) -> dict:
    """Metric block of one ranking."""
    y = _labels(labels)
    by_id = ranked.by_id()
    return {
        "precision_at": {str(k): precision_at_k(ranked, y, k / 100) for k in K_PERCENTS},
        "recall_at": {str(k): recall_at_k(ranked, y, k / 100) for k in K_PERCENTS},
        "auc": auc(ranked, y),
        "anomaly_mean_score": float(by_id[y].mean()),
        "clean_mean_score": float(by_id[~y].mean()),
    }


def mean_metrics(blocks: list[dict]) -> dict:
    if not blocks:
        raise MetricError("no runs to average")
    out = {}
    for key in METRIC_KEYS:
        if isinstance(blocks[0][key], dict):
            out[key] = {k: float(np.mean([b[key][k] for b in blocks])) for k in blocks[0][key]}
        else:
            out[key] = float(np.mean([b[key] for b in blocks]))
    return out


def build_report(blocks: list[dict]) -> dict:
    """Report whose headline metrics are the means over ``blocks``.

    ``runs`` keeps each run's block and ``mean`` repeats the averaged block so
    consumers can read either layout.
    """
    mean = mean_metrics(blocks)
    return {**mean, "runs": blocks, "mean": mean}


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(report: dict, path: str | Path) -> None:
    """One row per (run, K): ``run,k_percent,precision,recall,auc``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k_percent", "precision", "recall", "auc"])
        for i, block in enumerate(report["runs"]):
            for k in block["precision_at"]:
                w.writerow([i, k, block["precision_at"][k], block["recall_at"][k], block["auc"]])
