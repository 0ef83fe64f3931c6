from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from kgad.graph import KnowledgeGraph, Vocab

DATA = Path(__file__).resolve().parents[1] / "src" / "kgad" / "data"
KINSHIP = DATA / "kinship.tsv"
WORDNET = DATA / "wordnet_11rel_10k.tsv"


def graph_of(rows) -> KnowledgeGraph:
    return KnowledgeGraph.from_labeled_triples(rows)


def random_graph(rng: np.random.Generator, n_entities: int, n_relations: int,
                 n_triples: int) -> KnowledgeGraph:
    keys = rng.choice(n_entities * n_relations * n_entities, size=n_triples, replace=False)
    h, rest = np.divmod(keys, n_relations * n_entities)
    r, t = np.divmod(rest, n_entities)
    return KnowledgeGraph(h, r, t, Vocab(f"e{i}" for i in range(n_entities)),
                          Vocab(f"r{i}" for i in range(n_relations)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_graph():
    return random_graph(np.random.default_rng(5), 30, 4, 200)


# -- acceptance summary -----------------------------------------------------------------

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
