"""Finite-difference verification of the full training objective's gradients."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corruption import build_batch
from .graph import KnowledgeGraph, Vocab
from .tensor import Tape
from .trainer import TrainConfig, batch_loss, init_store

TOLERANCE = 1e-4
ABS_FLOOR = 1e-6    # denominators below this are treated as this (finite-difference noise)


@dataclass
class GroupResult:
    name: str
    checked: int
    max_rel_err: float


@dataclass
class GradcheckReport:
    groups: list[GroupResult] = field(default_factory=list)
    seconds: float = 0.0
    tolerance: float = TOLERANCE

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def lines(self) -> list[str]:
        out = [f"{g.name:28s} checked {g.checked:4d}  max rel err {g.max_rel_err:.3e}"
               for g in self.groups]
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"{verdict}: max rel err {self.max_rel_err:.3e} (tol {self.tolerance:g}) "
                   f"in {self.seconds:.2f}s")
        return out


def toy_graph(rng: np.random.Generator, n_entities: int = 10, n_relations: int = 3,
              n_triples: int = 40) -> KnowledgeGraph:
    keys = rng.choice(n_entities * n_relations * n_entities, size=n_triples, replace=False)
    h, rest = np.divmod(keys, n_relations * n_entities)
    r, t = np.divmod(rest, n_entities)
    ents = Vocab(f"e{i}" for i in range(n_entities))
    rels = Vocab(f"r{i}" for i in range(n_relations))
    return KnowledgeGraph(h, r, t, ents, rels)


def gradcheck(dim: int = 8, batch: int = 4, seed: int = 0, step: float = 1e-5,
              per_param: int = 24, m: int = 3, config: TrainConfig | None = None) -> GradcheckReport:
    """Compare tape gradients of the combined loss with central differences.

    Neighbour encodings stay on the tape (``exact`` mode), so gradients flow
    through all four aggregations, both encoders, the margin and the three KL
    terms. ``per_param`` entries of every parameter are checked, chosen at
    random among those with the largest analytic gradients and the rest.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    graph = toy_graph(rng)
    config = config or TrainConfig(dim=dim, batch_size=batch)
    config = config.replace(dim=dim, batch_size=batch, neighbor_mode="exact")
    store = init_store(graph, config, seed)
    anchors = rng.choice(len(graph), size=batch, replace=False)
    b = build_batch(graph, anchors, m, rng)

    leaves = store.leaves()
    with Tape() as tape:
        loss = batch_loss(leaves, graph, b, config)[0]
    T.backward(tape, loss)
    store.zero_grad()
    store.collect(leaves.values())

    def objective() -> float:
        return batch_loss(store.frozen(), graph, b, config)[0].item()

    report = GradcheckReport()
    for name in store:
        param = store[name]
        flat_val = param.value.reshape(-1)
        flat_grad = param.grad.reshape(-1)
        n = flat_val.size
        k = min(per_param, n)
        strongest = np.argsort(-np.abs(flat_grad), kind="stable")[: k // 2]
        rest = np.setdiff1d(np.arange(n), strongest)
        picked = np.concatenate([strongest, rng.choice(rest, size=min(k - strongest.size, rest.size),
                                                       replace=False)])
        worst = 0.0
        for i in picked:
            orig = flat_val[i]
            flat_val[i] = orig + step
            up = objective()
            flat_val[i] = orig - step
            down = objective()
            flat_val[i] = orig
            numeric = (up - down) / (2 * step)
            analytic = flat_grad[i]
            denom = max(abs(numeric), abs(analytic), ABS_FLOOR)
            worst = max(worst, abs(numeric - analytic) / denom)
        report.groups.append(GroupResult(name, int(picked.size), worst))
    report.seconds = time.perf_counter() - start
    return report
