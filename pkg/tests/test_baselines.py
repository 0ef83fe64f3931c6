import numpy as np
import pytest

from kgad.baselines import (
    BaselineConfig,
    baseline_scores,
    complex_score,
    distmult_score,
    init_baseline,
    score_baseline,
    train_baseline,
    transe_score,
)
from kgad.corruption import inject_anomalies
from kgad.evaluation import auc
from kgad.trainer import ConfigError

from conftest import random_graph


def test_transe_exact_translation_is_zero():
    assert transe_score(np.array([1.0, 2.0]), np.array([0.5, -1.0]), np.array([1.5, 1.0])).item() == 0.0


def test_transe_hand_norm():
    v = transe_score(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, 0.0])).item()
    assert v == pytest.approx(2 ** 0.5, abs=1e-15)


def test_distmult_hand_value():
    assert distmult_score(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])).item() == 0.0
    assert distmult_score(np.array([1.0, 2.0]), np.array([3.0, 1.0]), np.array([1.0, 1.0])).item() == -5.0


def test_complex_matches_complex_arithmetic():
    rng = np.random.default_rng(0)
    h, r, t = (rng.normal(size=3) + 1j * rng.normal(size=3) for _ in range(3))
    want = -np.real(np.sum(h * r * np.conj(t)))
    got = complex_score(h.real, h.imag, r.real, r.imag, t.real, t.imag).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_config_validation():
    with pytest.raises(ConfigError):
        BaselineConfig(method="rotate")
    with pytest.raises(ConfigError):
        BaselineConfig(dim=0)


def test_transe_init_unit_norm():
    g = random_graph(np.random.default_rng(0), 10, 2, 30)
    store = init_baseline(g, BaselineConfig(dim=8))
    np.testing.assert_allclose(np.linalg.norm(store["ent"].value, axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("method", ["transe", "distmult", "complex"])
def test_baselines_separate_easy_anomalies(method):
    """Clean triples stay inside entity clusters; uniform corruptions mostly cross them."""
    from kgad.graph import KnowledgeGraph, Vocab
    rng = np.random.default_rng(0)
    n_ent, size = 48, 6
    pairs = [(a, r, b) for a in range(n_ent) for b in range(n_ent) for r in range(2)
             if a != b and a // size == b // size]
    keep = rng.choice(len(pairs), size=300, replace=False)
    h, r, t = np.array([pairs[i] for i in keep]).T
    clean = KnowledgeGraph(h, r, t, Vocab(f"e{i}" for i in range(n_ent)), Vocab(["a", "b"]))
    corpus = inject_anomalies(clean, 0.1, np.random.default_rng(1))
    store = train_baseline(corpus, BaselineConfig(method=method, dim=16, epochs=40, batch_size=32))
    assert auc(score_baseline(store, corpus, method), corpus.labels) > 0.75


def test_baseline_training_deterministic():
    g = random_graph(np.random.default_rng(1), 15, 2, 60)
    cfg = BaselineConfig(method="distmult", dim=4, epochs=2)
    a, b = train_baseline(g, cfg), train_baseline(g, cfg)
    np.testing.assert_array_equal(a["ent"].value, b["ent"].value)


def test_baseline_scores_shape():
    g = random_graph(np.random.default_rng(1), 15, 2, 60)
    for method in ("transe", "distmult", "complex"):
        store = init_baseline(g, BaselineConfig(method=method, dim=4))
        s = baseline_scores(store.frozen(), method, g.heads, g.rels, g.tails)
        assert s.shape == (len(g),)
