"""Classic embedding scorers (TransE, DistMult, ComplEx) used as detection baselines.

Each is trained with a per-pair margin ranking loss on the same negative sampler
as the main model, and scores triples so that higher means more anomalous.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corruption import LabeledCorpus, negative_batches
from .evaluation import RankedScores
from .graph import KnowledgeGraph
from .tensor import ParamStore, Tape, adam_step, xavier_init
from .trainer import ConfigError, epoch_seed

log = logging.getLogger(__name__)

METHODS = ("transe", "distmult", "complex")


@dataclass
class BaselineConfig:
    method: str = "transe"
    dim: int = 100
    batch_size: int = 256
    lr: float = 0.01
    epochs: int = 100
    gamma: float = 1.0
    reg: float = 1e-3     # L2 weight on the batch embeddings (DistMult, ComplEx)
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown baseline {self.method!r}; choose from {', '.join(METHODS)}")
        if self.dim < 1 or self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("dim >= 1, batch_size >= 1, epochs >= 0 and lr > 0 are required")
        if self.gamma < 0 or self.reg < 0:
            raise ConfigError("gamma and reg must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# -- scoring functions (higher = more anomalous) --------------------------------


def transe_score(h, r, t) -> T.Tensor:
    """``||h + r - t||_2`` row-wise."""
    return T.l2_norm(T.sub(T.add(h, r), t))


def distmult_score(h, r, t) -> T.Tensor:
    """Negated trilinear product ``-<h, r, t>``."""
    return T.mul(T.sum(T.mul(T.mul(h, r), t), axis=-1), -1.0)


def complex_score(h_re, h_im, r_re, r_im, t_re, t_im) -> T.Tensor:
    """Negated ``Re(<h, r, conj(t)>)``."""
    terms = T.add(
        T.add(T.mul(T.mul(h_re, r_re), t_re), T.mul(T.mul(h_im, r_re), t_im)),
        T.sub(T.mul(T.mul(h_re, r_im), t_im), T.mul(T.mul(h_im, r_im), t_re)),
    )
    return T.mul(T.sum(terms, axis=-1), -1.0)


def _tables(method: str) -> tuple[list[str], list[str]]:
    if method == "complex":
        return ["ent_re", "ent_im"], ["rel_re", "rel_im"]
    return ["ent"], ["rel"]


def init_baseline(graph: KnowledgeGraph, config: BaselineConfig) -> ParamStore:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xBA5E]))
    ents, rels = _tables(config.method)
    store = ParamStore()
    for name in ents:
        store.add(name, xavier_init((graph.n_entities, config.dim), rng))
    for name in rels:
        store.add(name, xavier_init((graph.n_relations, config.dim), rng))
    if config.method == "transe":
        _project(store)
    return store


def _project(store: ParamStore) -> None:
    ent = store["ent"].value
    ent /= np.maximum(np.linalg.norm(ent, axis=1, keepdims=True), 1e-12)


def baseline_scores(p: dict, method: str, h, r, t) -> T.Tensor:
    ents, rels = _tables(method)
    e = {n: (T.take_rows(p[n], h), T.take_rows(p[n], t)) for n in ents}
    rr = [T.take_rows(p[n], r) for n in rels]
    if method == "transe":
        return transe_score(e["ent"][0], rr[0], e["ent"][1])
    if method == "distmult":
        return distmult_score(e["ent"][0], rr[0], e["ent"][1])
    return complex_score(e["ent_re"][0], e["ent_im"][0], rr[0], rr[1], e["ent_re"][1], e["ent_im"][1])


def _l2_penalty(p: dict, method: str, h, r, t) -> T.Tensor:
    ents, rels = _tables(method)
    parts = [T.take_rows(p[n], ids) for n in ents for ids in (h, t)]
    parts += [T.take_rows(p[n], r) for n in rels]
    total = None
    for x in parts:
        sq = T.mean(T.sum(T.mul(x, x), axis=-1))
        total = sq if total is None else T.add(total, sq)
    return total


def train_baseline(corpus: LabeledCorpus | KnowledgeGraph, config: BaselineConfig) -> ParamStore:
    """Fit one baseline; labels are never read."""
    graph = corpus.graph if isinstance(corpus, LabeledCorpus) else corpus
    if len(graph) == 0:
        raise ValueError("cannot train on an empty corpus")
    store = init_baseline(graph, config)
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for anchors, negs in negative_batches(graph, config.batch_size, epoch_seed(config.seed, epoch)):
            h = np.concatenate([graph.heads[anchors], negs[:, 0]])
            r = np.concatenate([graph.rels[anchors], negs[:, 1]])
            t = np.concatenate([graph.tails[anchors], negs[:, 2]])
            n = anchors.size
            leaves = store.leaves()
            with Tape() as tape:
                s = baseline_scores(leaves, config.method, h, r, t)
                pos, neg = T.slice_rows(s, 0, n), T.slice_rows(s, n, 2 * n)
                loss = T.mean(T.relu(T.add(T.sub(pos, neg), config.gamma)))
                if config.method != "transe" and config.reg > 0:
                    loss = T.add(loss, T.mul(_l2_penalty(leaves, config.method, h, r, t), config.reg))
            T.backward(tape, loss)
            store.zero_grad()
            store.collect(leaves.values())
            adam_step(store, lr=config.lr)
            if config.method == "transe":
                _project(store)
            total += loss.item()
        log.debug("%s epoch %d loss %.6f", config.method, epoch, total)
    return store


def score_baseline(store: ParamStore, corpus: LabeledCorpus | KnowledgeGraph,
                   method: str) -> RankedScores:
    graph = corpus.graph if isinstance(corpus, LabeledCorpus) else corpus
    s = baseline_scores(store.frozen(), method, graph.heads, graph.rels, graph.tails)
    return RankedScores.from_scores(s.data)
