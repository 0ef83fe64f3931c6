import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgad.corruption import (
    CorruptionError,
    LabeledCorpus,
    SealedLabels,
    inject_anomalies,
    make_batches,
    n_injected,
    read_labeled,
    sample_negative,
    write_labeled,
)
from kgad.graph import TripleFormatError

from conftest import graph_of, random_graph


def test_injection_counts_on_thousand_triples():
    clean = random_graph(np.random.default_rng(0), 60, 5, 1000)
    corpus = inject_anomalies(clean, 0.05, np.random.default_rng(1))
    labels = corpus.labels.reveal()
    assert len(corpus) == 1050
    assert labels.sum() == 50


def test_injection_count_rounding():
    assert n_injected(6529, 0.05) == 326
    assert n_injected(10686, 0.05) == 534


def test_injected_triples_absent_from_clean_graph():
    clean = random_graph(np.random.default_rng(2), 40, 3, 500)
    corpus = inject_anomalies(clean, 0.15, np.random.default_rng(3))
    labels = corpus.labels.reveal()
    g = corpus.graph
    for tid in np.flatnonzero(labels == 1):
        h, r, t = g.labeled(int(tid))
        ids = (clean.entities.id(h), clean.relations.id(r), clean.entities.id(t))
        assert not clean.contains(*ids)
    for tid in np.flatnonzero(labels == 0):
        h, r, t = g.labeled(int(tid))
        assert clean.contains(clean.entities.id(h), clean.relations.id(r), clean.entities.id(t))


def test_injection_rejects_bad_ratio(small_graph):
    for ratio in (0.0, 1.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            inject_anomalies(small_graph, ratio, np.random.default_rng(0))


def test_injection_is_deterministic(small_graph):
    a = inject_anomalies(small_graph, 0.1, np.random.default_rng(9))
    b = inject_anomalies(small_graph, 0.1, np.random.default_rng(9))
    assert a.graph.same_as(b.graph)
    assert (a.labels.reveal() == b.labels.reveal()).all()


def test_labeled_file_round_trip(tmp_path, small_graph):
    corpus = inject_anomalies(small_graph, 0.1, np.random.default_rng(4))
    path = tmp_path / "c.tsv"
    write_labeled(corpus, path)
    again = read_labeled(path)
    assert len(again) == len(corpus)
    assert (again.labels.reveal() == corpus.labels.reveal()).all()
    assert again.n_clean == corpus.n_clean


def test_labeled_file_bad_label(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("A\tr\tB\t2\n")
    with pytest.raises(TripleFormatError):
        read_labeled(p)


def test_sealed_labels_count_reads():
    s = SealedLabels([0, 1, 0])
    assert s.reads == 0
    s.reveal()
    s.reveal()
    assert s.reads == 2
    with pytest.raises(ValueError):
        SealedLabels([0, 2])


def test_negative_replaces_exactly_one_entity():
    """Corpus {(A,r,B)} over entities {A,B,C}: every negative swaps the head or the tail."""
    from kgad.graph import KnowledgeGraph, Vocab
    g = KnowledgeGraph([0], [0], [1], Vocab(["A", "B", "C"]), Vocab(["r"]))
    rng = np.random.default_rng(0)
    seen = {sample_negative((0, 0, 1), g, rng) for _ in range(300)}
    # head in {B, C} or tail in {A, C}; self-loops are legitimate corruptions
    assert seen == {(1, 0, 1), (2, 0, 1), (0, 0, 0), (0, 0, 2)}


def test_negative_head_fraction_balanced():
    g = random_graph(np.random.default_rng(7), 500, 5, 2000)
    rng = np.random.default_rng(8)
    heads = 0
    for i in range(10_000):
        anchor = g.triple(i % len(g))
        neg = sample_negative(anchor, g, rng)
        heads += neg[0] != anchor[0]
    assert 0.47 <= heads / 10_000 <= 0.53


def test_negative_impossible_raises():
    from kgad.graph import KnowledgeGraph, Vocab
    # both corruptions of (A,r,B) over {A, B} are already present
    g = KnowledgeGraph([0, 0, 1], [0, 0, 0], [1, 0, 1], Vocab(["A", "B"]), Vocab(["r"]))
    with pytest.raises(CorruptionError):
        sample_negative((0, 0, 1), g, np.random.default_rng(0))


def test_batch_sizes():
    g = random_graph(np.random.default_rng(0), 60, 5, 1050)
    sizes = [len(b) for b in make_batches(g, 256, 3, epoch_seed=11)]
    assert sizes == [256, 256, 256, 256, 26]


def test_batches_deterministic(small_graph):
    a = list(make_batches(small_graph, 64, 4, epoch_seed=3))
    b = list(make_batches(small_graph, 64, 4, epoch_seed=3))
    for x, y in zip(a, b):
        for field in ("anchors", "negatives", "anchor_head_nbrs", "negative_tail_nbrs"):
            assert (getattr(x, field) == getattr(y, field)).all()


def test_batches_never_read_labels(small_graph):
    corpus = inject_anomalies(small_graph, 0.1, np.random.default_rng(0))
    reads = corpus.labels.reads
    list(make_batches(corpus, 32, 3, epoch_seed=0))
    assert corpus.labels.reads == reads


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), m=st.integers(1, 9), bs=st.integers(1, 70))
def test_batch_invariants(seed, m, bs):
    g = random_graph(np.random.default_rng(seed), 20, 3, 90)
    covered = []
    for b in make_batches(g, bs, m, epoch_seed=seed):
        covered.extend(b.anchors)
        for field in ("anchor_head_nbrs", "anchor_tail_nbrs", "negative_head_nbrs",
                      "negative_tail_nbrs"):
            assert getattr(b, field).shape == (len(b), m)
        for a, neg in zip(b.anchors, b.negatives):
            anchor = g.triple(int(a))
            assert neg[1] == anchor[1]
            assert (neg[0] != anchor[0]) + (neg[2] != anchor[2]) == 1
            assert not g.contains(*map(int, neg))
    assert sorted(covered) == list(range(len(g)))
