"""Training loop: batches, forward pass, combined loss, backpropagation, Adam."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .corruption import Batch, LabeledCorpus, make_batches
from .encoders import encode, init_params
from .graph import KnowledgeGraph, mean_neighbor_count
from .model import NeighbourRows, corpus_table, forward, view_scores
from .objective import consistency_loss, margin_loss, margin_loss_per_sample, total_loss
from .tensor import NonFiniteError, ParamStore, Tape, adam_step

log = logging.getLogger(__name__)

NEIGHBOR_MODES = ("cached", "exact")
MARGIN_REDUCTIONS = ("sample", "batch")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    dim: int = 100
    batch_size: int = 256
    lr: float = 0.01
    epochs: int = 100
    alpha: float = 0.9
    beta: float = 0.3
    gamma: float = 0.5
    neighbor_count: int | None = None      # None: mean neighbour count of the corpus
    seed: int = 0
    runs: int = 10
    aggregation_sigmoid: bool = False
    margin_literal: bool = False
    margin_reduction: str = "sample"        # "batch": hinge on the batch means
    neighbor_mode: str = "cached"
    patience: int = 10
    min_delta: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dim < 2 or self.dim % 2:
            raise ConfigError(f"dim must be even and >= 2, got {self.dim}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and lr > 0 are required")
        if self.neighbor_count is not None and self.neighbor_count < 1:
            raise ConfigError(f"neighbor_count must be >= 1, got {self.neighbor_count}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise ConfigError(f"neighbor_mode must be one of {NEIGHBOR_MODES}")
        if self.margin_reduction not in MARGIN_REDUCTIONS:
            raise ConfigError(f"margin_reduction must be one of {MARGIN_REDUCTIONS}")
        if self.patience < 1 or self.min_delta < 0:
            raise ConfigError("patience >= 1 and min_delta >= 0 are required")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def replace(self, **changes) -> "TrainConfig":
        unknown = set(changes) - set(self.keys())
        if unknown:
            raise ConfigError(f"unknown config key(s) {sorted(unknown)}; valid keys: {', '.join(self.keys())}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        return cls().replace(**values)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_value(key: str, text: str):
    """Convert the text of config ``key`` to the field's type."""
    default = getattr(TrainConfig(), key) if key in TrainConfig.keys() else None
    text = text.strip()
    if key == "neighbor_count":
        if text.lower() in ("", "none", "auto"):
            return None
        return int(text)
    if isinstance(default, bool):
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r}") from None
    return text


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into typed overrides."""
    out = {}
    valid = TrainConfig.keys()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in valid:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}; valid keys: {', '.join(valid)}")
        out[key] = parse_value(key, value)
    return out


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    margin: float
    consistency: float
    seconds: float


@dataclass
class TrainHistory:
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0          # 0 = the initialisation
    stopped_early: bool = False

    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)


# -- one batch ------------------------------------------------------------------


def batch_rows(graph: KnowledgeGraph, batch: Batch):
    """Stack anchors then negatives: ``(h, r, t, NeighbourRows)`` over ``2B`` rows."""
    a = batch.anchors
    h = np.concatenate([graph.heads[a], batch.negatives[:, 0]])
    r = np.concatenate([graph.rels[a], batch.negatives[:, 1]])
    t = np.concatenate([graph.tails[a], batch.negatives[:, 2]])
    nbrs = NeighbourRows(
        head_idx=np.vstack([batch.anchor_head_nbrs, batch.negative_head_nbrs]),
        tail_idx=np.vstack([batch.anchor_tail_nbrs, batch.negative_tail_nbrs]),
        head_keys=h.copy(),
        tail_keys=t.copy(),
    )
    return h, r, t, nbrs


def batch_loss(p: dict, graph: KnowledgeGraph, batch: Batch, config: TrainConfig,
               table: tuple[T.Tensor, T.Tensor] | None = None):
    """``(total, margin, consistency)`` tensors of one batch.

    With ``table=None`` the neighbour triples are encoded on the current tape
    (exact gradients); otherwise ``table`` holds precomputed ``(q, q')`` rows of
    every corpus triple, treated as constants.
    """
    h, r, t, nbrs = batch_rows(graph, batch)
    if table is None:
        ids = np.unique(np.concatenate([nbrs.head_idx.ravel(), nbrs.tail_idx.ravel()]))
        enc = forward_table(p, graph, ids)
        nbrs.head_idx = np.searchsorted(ids, nbrs.head_idx)
        nbrs.tail_idx = np.searchsorted(ids, nbrs.tail_idx)
        table = enc
    fw = forward(p, h, r, t, nbrs, table[0], table[1], config.alpha, config.aggregation_sigmoid)
    n = len(batch)
    pos, neg = T.slice_rows(fw.score, 0, n), T.slice_rows(fw.score, n, 2 * n)
    hinge = margin_loss_per_sample if config.margin_reduction == "sample" else margin_loss
    margin = hinge(pos, neg, config.gamma, literal=config.margin_literal)
    consistency = consistency_loss(view_scores(p, fw, n))
    return total_loss(margin, consistency, config.beta), margin, consistency


def forward_table(p: dict, graph: KnowledgeGraph, ids: np.ndarray):
    enc = encode(p, graph.heads[ids], graph.rels[ids], graph.tails[ids])
    return enc.q, enc.q_prime


# -- training -------------------------------------------------------------------


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, 0xE90C]).generate_state(1)[0])


def init_store(graph: KnowledgeGraph, config: TrainConfig, seed: int) -> ParamStore:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    return init_params(graph.n_entities, graph.n_relations, config.dim, rng)


def train(corpus: LabeledCorpus | KnowledgeGraph, config: TrainConfig,
          seed: int | None = None) -> tuple[ParamStore, TrainHistory]:
    """Train one model; returns the lowest-loss epoch's parameters and the history.

    Labels are never read. Every epoch reshuffles the corpus and redraws
    negatives and neighbour lists. In ``cached`` neighbour mode the neighbour
    encodings are recomputed once per epoch and held fixed within it.
    """
    graph = corpus.graph if isinstance(corpus, LabeledCorpus) else corpus
    if len(graph) == 0:
        raise ValueError("cannot train on an empty corpus")
    seed = config.seed if seed is None else seed
    m = config.neighbor_count or mean_neighbor_count(graph)
    store = init_store(graph, config, seed)
    history = TrainHistory(seed=seed)
    best_loss, best = np.inf, store.snapshot()
    since_improved = 0

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        table = None
        if config.neighbor_mode == "cached":
            table = corpus_table(store, graph.heads, graph.rels, graph.tails)
        sums = np.zeros(3)
        n_batches = 0
        for bi, batch in enumerate(make_batches(graph, config.batch_size, m, epoch_seed(seed, epoch))):
            leaves = store.leaves()
            try:
                with Tape() as tape:
                    losses = batch_loss(leaves, graph, batch, config, table)
                T.backward(tape, losses[0])
            except NonFiniteError as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            store.zero_grad()
            store.collect(leaves.values())
            adam_step(store, lr=config.lr)
            sums += [x.item() for x in losses]
            n_batches += 1
        loss, margin, consistency = sums / n_batches
        if not np.isfinite(loss):
            raise TrainingError(f"epoch {epoch}: non-finite loss {loss}")
        history.epochs.append(EpochRecord(epoch, loss, margin, consistency,
                                          time.perf_counter() - start))
        log.info("seed %d epoch %d loss %.6f (margin %.6f, kl %.6f)", seed, epoch, loss,
                 margin, consistency)
        if loss < best_loss:
            since_improved = 0 if best_loss - loss >= config.min_delta else since_improved + 1
            best_loss, best = loss, store.snapshot()
            history.best_epoch = epoch
        else:
            since_improved += 1
        if since_improved >= config.patience:
            history.stopped_early = True
            break

    store.load(best)
    return store, history


def train_multi(corpus, config: TrainConfig) -> list[tuple[ParamStore, TrainHistory]]:
    """``config.runs`` independent trainings with seeds ``seed, seed+1, ...``."""
    return [train(corpus, config, seed=config.seed + k) for k in range(config.runs)]
