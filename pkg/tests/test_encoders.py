import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgad import tensor as T
from kgad.encoders import (
    DIRECTIONS,
    VIEWS,
    aggregate_neighbors,
    attention_weights,
    encode,
    encode_all,
    encode_entity_view,
    encode_triplet_view,
    init_params,
)


def zero_store(n_ent=3, n_rel=2, dim=4):
    store = init_params(n_ent, n_rel, dim, np.random.default_rng(0))
    for name in store:
        store[name].value[...] = 0.0
    return store


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def ref_lstm(xs, W, U, b):
    """Plain per-step LSTM with gate order [input, forget, output, candidate]."""
    hdim = U.shape[0]
    h, c = np.zeros(hdim), np.zeros(hdim)
    out = []
    for x in xs:
        a = x @ W + h @ U + b
        i = 1 / (1 + np.exp(-a[:hdim]))
        f = 1 / (1 + np.exp(-a[hdim:2 * hdim]))
        o = 1 / (1 + np.exp(-a[2 * hdim:3 * hdim]))
        g = np.tanh(a[3 * hdim:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return out


def ref_encode(store, h, r, t):
    v = {n: store[n].value for n in store}
    xs = [v["entity_emb"][h], v["relation_emb"][r], v["entity_emb"][t]]

    def run(view):
        fwd = ref_lstm(xs, v[f"{view}.fwd.W"], v[f"{view}.fwd.U"], v[f"{view}.fwd.b"])
        bwd = ref_lstm(xs[::-1], v[f"{view}.bwd.W"], v[f"{view}.bwd.U"], v[f"{view}.bwd.b"])[::-1]
        return fwd, bwd

    fwd, bwd = run("entity_lstm")
    tokens = [np.concatenate([fwd[k], bwd[k]]) for k in range(3)]
    fwd_d, bwd_d = run("triplet_lstm")
    return tokens, np.concatenate(tokens), np.concatenate([fwd_d[2], bwd_d[0]])


def test_zero_parameters_give_zero_encodings():
    # every gate is sigmoid(0) = 1/2 and the candidate tanh(0) = 0, so c and h stay 0
    enc = encode(zero_store().frozen(), [0], [1], [2])
    assert not enc.q.data.any() and not enc.q_prime.data.any()


def test_zero_weight_bias_trace_n4():
    """Zero weights, candidate bias 1: hand-run the scalar recurrence at n = 4."""
    store = zero_store(dim=4)
    hidden = 2
    for view in VIEWS:
        for d in DIRECTIONS:
            store[f"{view}.{d}.b"].value[3 * hidden:] = 1.0
    # c_k = c_{k-1}/2 + tanh(1)/2 and h_k = tanh(c_k)/2 in every unit
    c, hs = 0.0, []
    for _ in range(3):
        c = 0.5 * c + 0.5 * math.tanh(1.0)
        hs.append(0.5 * math.tanh(c))
    assert sig(0.0) == 0.5
    enc = encode(store.frozen(), [0], [1], [2])
    # token k sees k+1 forward steps and 3-k backward steps
    expect_q = np.concatenate([[hs[k]] * 2 + [hs[2 - k]] * 2 for k in range(3)])
    np.testing.assert_allclose(enc.q.data[0], expect_q, atol=1e-15)
    np.testing.assert_allclose(enc.q_prime.data[0], [hs[2]] * 4, atol=1e-15)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), half=st.integers(1, 5))
def test_encoder_matches_reference_lstm(seed, half):
    dim = 2 * half
    rng = np.random.default_rng(seed)
    store = init_params(5, 3, dim, rng)
    for name in store:
        store[name].value[...] = rng.normal(scale=0.7, size=store[name].value.shape)
    h, r, t = rng.integers(5, size=4), rng.integers(3, size=4), rng.integers(5, size=4)
    enc = encode(store.frozen(), h, r, t)
    for b in range(4):
        tokens, q, qp = ref_encode(store, h[b], r[b], t[b])
        np.testing.assert_allclose(enc.q.data[b], q, atol=1e-12)
        np.testing.assert_allclose(enc.q_prime.data[b], qp, atol=1e-12)
        for got, want in zip((enc.e_h, enc.e_r, enc.e_t), tokens):
            np.testing.assert_allclose(got.data[b], want, atol=1e-12)


def test_widths_at_default_dim():
    store = init_params(4, 2, 100, np.random.default_rng(0))
    e_h, e_r, e_t, q = encode_entity_view(store.frozen(), (0, 1, 2))
    qp = encode_triplet_view(store.frozen(), (0, 1, 2))
    assert e_h.shape == e_r.shape == e_t.shape == (1, 100)
    assert q.shape == (1, 300) and qp.shape == (1, 100)


@pytest.mark.parametrize("dim", [2, 6, 16])
def test_q_is_three_times_q_prime(dim):
    enc = encode(init_params(3, 2, dim, np.random.default_rng(1)).frozen(), [0], [0], [1])
    assert enc.q.shape[1] == 3 * enc.q_prime.shape[1] == 3 * dim


def test_same_ids_same_encoding():
    p = init_params(4, 2, 8, np.random.default_rng(2)).frozen()
    enc = encode(p, [1, 3, 1], [0, 1, 0], [2, 0, 2])
    np.testing.assert_array_equal(enc.q.data[0], enc.q.data[2])
    np.testing.assert_array_equal(enc.q_prime.data[0], enc.q_prime.data[2])


def test_encode_all_chunking_is_invisible():
    store = init_params(6, 3, 8, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    h, r, t = rng.integers(6, size=50), rng.integers(3, size=50), rng.integers(6, size=50)
    q1, p1 = encode_all(store, h, r, t, chunk=7)
    q2, p2 = encode_all(store, h, r, t)
    np.testing.assert_allclose(q1, q2, atol=1e-14)
    np.testing.assert_allclose(p1, p2, atol=1e-14)


def test_init_rejects_odd_dim():
    with pytest.raises(ValueError):
        init_params(3, 2, 5, np.random.default_rng(0))


def test_every_parameter_registered_once():
    store = init_params(3, 2, 4, np.random.default_rng(0))
    names = store.names()
    assert len(names) == len(set(names))
    assert {"entity_emb", "relation_emb", "mlp1.W1", "mlp2.W1", "mlp3.W2"} <= set(names)
    assert sum(n.endswith(".U") for n in names) == 4


# -- aggregation ----------------------------------------------------------------------


def test_aggregation_hand_example():
    z = aggregate_neighbors([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).data
    a = attention_weights([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(a, [0.7311, 0.2689], atol=1e-4)
    np.testing.assert_allclose(z, [0.7311, 0.2689], atol=1e-4)
    assert a[0] == pytest.approx(math.e / (math.e + 1), abs=1e-15)


def test_aggregation_equal_similarities_is_mean():
    nbrs = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 5.0]])
    z = aggregate_neighbors([0.0, 0.0], nbrs).data
    np.testing.assert_allclose(z, nbrs.mean(axis=0), atol=1e-15)


def test_aggregation_single_neighbor():
    z = aggregate_neighbors([0.3, -2.0], [[4.0, 5.0]]).data
    np.testing.assert_allclose(z, [4.0, 5.0], atol=1e-15)


def test_aggregation_sigmoid_variant():
    z = aggregate_neighbors([0.0], [[2.0]], use_sigmoid=True).data
    assert z[0] == pytest.approx(1 / (1 + math.exp(-2.0)), abs=1e-15)


def test_aggregation_shape_errors():
    with pytest.raises(T.ShapeError):
        aggregate_neighbors([1.0, 0.0], [[1.0, 0.0, 0.0]])
    with pytest.raises(T.ShapeError):
        aggregate_neighbors([[1.0]], [[1.0]])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 12), d=st.integers(1, 10))
def test_attention_weights_sum_to_one(seed, m, d):
    rng = np.random.default_rng(seed)
    a = attention_weights(rng.normal(size=d), rng.normal(size=(m, d)))
    assert abs(a.sum() - 1.0) <= 1e-12 and (a >= 0).all()
