"""Synthetic anomaly injection, negative sampling and batch assembly."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .graph import KnowledgeGraph, TripleFormatError, Vocab, neighbor_lists, read_rows

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 1000


class CorruptionError(RuntimeError):
    """The graph is too dense to find an unseen corrupted triple."""


class SealedLabels:
    """Anomaly labels that count every read.

    Training code must never look at labels; the counter lets tests prove it.
    """

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.int8)
        if arr.ndim != 1 or not np.isin(arr, (0, 1)).all():
            raise ValueError("labels must be a 1-d array of 0/1 flags")
        self._values = arr
        self.reads = 0

    def reveal(self) -> np.ndarray:
        self.reads += 1
        return self._values.copy()

    def __len__(self) -> int:
        return int(self._values.size)

    def __repr__(self) -> str:
        return f"SealedLabels(n={len(self)}, reads={self.reads})"


@dataclass
class LabeledCorpus:
    graph: KnowledgeGraph
    labels: SealedLabels
    anomaly_ratio: float
    n_clean: int

    def __len__(self) -> int:
        return len(self.graph)


def n_injected(n_clean: int, ratio: float) -> int:
    """Number of anomalies for a clean graph of ``n_clean`` triples (round half up)."""
    return int(np.floor(ratio * n_clean + 0.5))


def _corrupt(h: int, r: int, t: int, n_entities: int, rng: np.random.Generator,
             rejected) -> tuple[int, int, int]:
    for _ in range(MAX_ATTEMPTS):
        e = int(rng.integers(n_entities))
        if rng.random() < 0.5:
            cand = (e, r, t)
        else:
            cand = (h, r, e)
        if not rejected(*cand):
            return cand
    raise CorruptionError(
        f"no unseen corruption of ({h}, {r}, {t}) after {MAX_ATTEMPTS} attempts"
    )


def inject_anomalies(clean: KnowledgeGraph, ratio: float, rng: np.random.Generator) -> LabeledCorpus:
    """Add ``round(ratio * |clean|)`` corrupted triples with label 1.

    Each anomaly replaces the head or the tail (fair coin) of a uniformly drawn
    clean triple by a uniformly drawn entity, retrying while the result is
    already in the clean graph or among the anomalies made so far. The merged
    corpus is shuffled so that labels carry no positional signal.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if clean.n_entities < 2:
        raise CorruptionError("need at least two entities to corrupt triples")
    count = n_injected(len(clean), ratio)
    injected: set[tuple[int, int, int]] = set()
    new: list[tuple[int, int, int]] = []

    def rejected(h, r, t):
        return clean.contains(h, r, t) or (h, r, t) in injected

    for _ in range(count):
        src = int(rng.integers(len(clean)))
        triple = _corrupt(*clean.triple(src), clean.n_entities, rng, rejected)
        injected.add(triple)
        new.append(triple)
    extra = np.array(new, dtype=np.int64).reshape(-1, 3)
    heads = np.concatenate([clean.heads, extra[:, 0]])
    rels = np.concatenate([clean.rels, extra[:, 1]])
    tails = np.concatenate([clean.tails, extra[:, 2]])
    labels = np.concatenate([np.zeros(len(clean), np.int8), np.ones(count, np.int8)])
    order = rng.permutation(heads.size)
    graph = KnowledgeGraph(heads[order], rels[order], tails[order], clean.entities, clean.relations)
    log.info("injected %d anomalies into %d clean triples", count, len(clean))
    return LabeledCorpus(graph, SealedLabels(labels[order]), ratio, len(clean))


def write_labeled(corpus: LabeledCorpus, path: str | Path) -> None:
    """Write the 4-column ``head<TAB>relation<TAB>tail<TAB>label`` file."""
    labels = corpus.labels.reveal()
    g = corpus.graph
    with Path(path).open("w", encoding="utf-8") as fh:
        for tid in range(len(g)):
            h, r, t = g.labeled(tid)
            fh.write(f"{h}\t{r}\t{t}\t{int(labels[tid])}\n")


def read_labeled(path: str | Path) -> LabeledCorpus:
    rows = read_rows(path, 4)
    ents, rels = Vocab(), Vocab()
    hs, rs, ts, ys = [], [], [], []
    seen = set()
    for lineno, (h, r, t, y) in enumerate(rows, start=1):
        if y not in ("0", "1"):
            raise TripleFormatError(f"{path}: row {lineno}: label must be 0 or 1, got {y!r}")
        key = (ents.add(h), rels.add(r), ents.add(t))
        if key in seen:
            raise TripleFormatError(f"{path}: row {lineno}: duplicate triple")
        seen.add(key)
        hs.append(key[0])
        rs.append(key[1])
        ts.append(key[2])
        ys.append(int(y))
    graph = KnowledgeGraph(hs, rs, ts, ents, rels)
    labels = np.array(ys, dtype=np.int8)
    n_anom = int(labels.sum())
    n_clean = len(graph) - n_anom
    ratio = n_anom / n_clean if n_clean else float("nan")
    return LabeledCorpus(graph, SealedLabels(labels), ratio, n_clean)


# -- negatives and batches -----------------------------------------------------


def sample_negative(anchor: tuple[int, int, int], corpus: KnowledgeGraph,
                    rng: np.random.Generator) -> tuple[int, int, int]:
    """Corrupt the head or the tail of ``anchor`` into a triple absent from ``corpus``."""
    if corpus.n_entities < 2:
        raise CorruptionError("need at least two entities to sample negatives")
    return _corrupt(*anchor, corpus.n_entities, rng, corpus.contains)


@dataclass
class Batch:
    anchors: np.ndarray              # (B,) triple ids
    negatives: np.ndarray            # (B, 3) entity/relation ids
    anchor_head_nbrs: np.ndarray     # (B, m) triple ids
    anchor_tail_nbrs: np.ndarray
    negative_head_nbrs: np.ndarray
    negative_tail_nbrs: np.ndarray

    def __len__(self) -> int:
        return int(self.anchors.size)


def batch_rng(epoch_seed: int, batch_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([epoch_seed, batch_index, 0xBA7C4]))


def build_batch(graph: KnowledgeGraph, anchors: np.ndarray, m: int,
                rng: np.random.Generator) -> Batch:
    anchors = np.asarray(anchors, dtype=np.int64)
    negs = np.array(
        [sample_negative(graph.triple(int(a)), graph, rng) for a in anchors], dtype=np.int64
    ).reshape(-1, 3)
    no_exclude = np.full(anchors.size, -1, dtype=np.int64)
    return Batch(
        anchors=anchors,
        negatives=negs,
        anchor_head_nbrs=neighbor_lists(graph, graph.heads[anchors], anchors, anchors, m, rng, "head"),
        anchor_tail_nbrs=neighbor_lists(graph, graph.tails[anchors], anchors, anchors, m, rng, "tail"),
        # a negative is not a corpus triple: nothing to exclude, fall back to its anchor
        negative_head_nbrs=neighbor_lists(graph, negs[:, 0], no_exclude, anchors, m, rng, "head"),
        negative_tail_nbrs=neighbor_lists(graph, negs[:, 2], no_exclude, anchors, m, rng, "tail"),
    )


def _epoch_order(n: int, epoch_seed: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([epoch_seed, 0x5EED])).permutation(n)


def make_batches(corpus: LabeledCorpus | KnowledgeGraph, batch_size: int, m: int,
                 epoch_seed: int) -> Iterator[Batch]:
    """Shuffle the corpus with ``epoch_seed`` and yield batches (last one may be short).

    Batch ``i`` draws its negatives and neighbours from a generator seeded with
    ``(epoch_seed, i)``, so batches can be built independently and the stream is
    a pure function of its arguments.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    graph = corpus.graph if isinstance(corpus, LabeledCorpus) else corpus
    order = _epoch_order(len(graph), epoch_seed)
    for bi, start in enumerate(range(0, len(graph), batch_size)):
        yield build_batch(graph, order[start : start + batch_size], m, batch_rng(epoch_seed, bi))


def negative_batches(graph: KnowledgeGraph, batch_size: int,
                     epoch_seed: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Like :func:`make_batches` without neighbour lists: ``(anchor ids, (B, 3) negatives)``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = _epoch_order(len(graph), epoch_seed)
    for bi, start in enumerate(range(0, len(graph), batch_size)):
        anchors = order[start : start + batch_size]
        rng = batch_rng(epoch_seed, bi)
        negs = np.array([sample_negative(graph.triple(int(a)), graph, rng) for a in anchors],
                        dtype=np.int64).reshape(-1, 3)
        yield anchors, negs
