"""BiLSTM triple encoders, scoring MLPs and neighbour attention.

Both channels read the same entity/relation embedding tables. Each BiLSTM runs
over the three-token sequence ``[e_h, e_r, e_t]`` with ``n/2`` hidden units per
direction, so per-token outputs and the final-state summary are both ``n`` wide.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamStore, Tensor, xavier_init

VIEWS = ("entity_lstm", "triplet_lstm")
DIRECTIONS = ("fwd", "bwd")
MLPS = {"mlp1": 1, "mlp2": 3, "mlp3": 1}   # input width in multiples of n


def init_params(n_entities: int, n_relations: int, dim: int,
                rng: np.random.Generator) -> ParamStore:
    """Xavier-initialised parameters; biases start at zero."""
    if dim < 2 or dim % 2:
        raise ValueError(f"embedding dim must be even and >= 2, got {dim}")
    hidden = dim // 2
    store = ParamStore()
    store.add("entity_emb", xavier_init((n_entities, dim), rng))
    store.add("relation_emb", xavier_init((n_relations, dim), rng))
    for view in VIEWS:
        for d in DIRECTIONS:
            store.add(f"{view}.{d}.W", xavier_init((dim, 4 * hidden), rng))
            store.add(f"{view}.{d}.U", xavier_init((hidden, 4 * hidden), rng))
            store.add(f"{view}.{d}.b", np.zeros(4 * hidden))
    for name, width in MLPS.items():
        store.add(f"{name}.W1", xavier_init((width * dim, dim), rng))
        store.add(f"{name}.b1", np.zeros(dim))
        store.add(f"{name}.W2", xavier_init((dim, 1), rng))
        store.add(f"{name}.b2", np.zeros(1))
    return store


def param_dims(store: ParamStore) -> tuple[int, int, int]:
    """(n_entities, n_relations, dim) of a parameter store."""
    ents = store["entity_emb"].value
    return ents.shape[0], store["relation_emb"].value.shape[0], ents.shape[1]


def _lstm_direction(tokens_x: list[Tensor], U: Tensor, b: Tensor, hidden: int) -> list[Tensor]:
    """Run one LSTM direction; ``tokens_x`` holds the precomputed ``x @ W`` per step."""
    h = c = None
    states = []
    for xw in tokens_x:
        gates = xw + b if h is None else xw + T.matmul(h, U) + b
        i = T.sigmoid(T.slice_cols(gates, 0, hidden))
        f = T.sigmoid(T.slice_cols(gates, hidden, 2 * hidden))
        o = T.sigmoid(T.slice_cols(gates, 2 * hidden, 3 * hidden))
        g = T.tanh(T.slice_cols(gates, 3 * hidden, 4 * hidden))
        c = i * g if c is None else f * c + i * g
        h = o * T.tanh(c)
        states.append(h)
    return states


def bilstm(p: dict[str, Tensor], view: str, tokens: Tensor, batch: int):
    """Forward/backward hidden states over a ``(3*batch, n)`` stacked token matrix.

    Rows ``[k*batch:(k+1)*batch]`` hold token ``k`` (head, relation, tail).
    Returns ``(fwd, bwd)`` lists indexed by token position.
    """
    hidden = p[f"{view}.fwd.U"].shape[0]
    out = {}
    for d in DIRECTIONS:
        xw = T.matmul(tokens, p[f"{view}.{d}.W"])
        per_token = [T.slice_rows(xw, k * batch, (k + 1) * batch) for k in range(3)]
        order = per_token if d == "fwd" else per_token[::-1]
        states = _lstm_direction(order, p[f"{view}.{d}.U"], p[f"{view}.{d}.b"], hidden)
        out[d] = states if d == "fwd" else states[::-1]
    return out["fwd"], out["bwd"]


@dataclass
class Encoding:
    """Both channels' representations of a batch of triples."""

    e_h: Tensor        # entity-view token outputs, (B, n) each
    e_r: Tensor
    e_t: Tensor
    q: Tensor          # (B, 3n)
    q_prime: Tensor    # (B, n)


def embed_tokens(p: dict[str, Tensor], h, r, t) -> Tensor:
    ents, rels = p["entity_emb"], p["relation_emb"]
    return T.concat([T.take_rows(ents, h), T.take_rows(rels, r), T.take_rows(ents, t)], axis=0)


def encode(p: dict[str, Tensor], h, r, t) -> Encoding:
    """Encode triples given as parallel id arrays."""
    h = np.atleast_1d(np.asarray(h, dtype=np.int64))
    r = np.atleast_1d(np.asarray(r, dtype=np.int64))
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    batch = h.size
    tokens = embed_tokens(p, h, r, t)
    fwd, bwd = bilstm(p, "entity_lstm", tokens, batch)
    outs = [T.concat([fwd[k], bwd[k]], axis=1) for k in range(3)]
    q = T.concat(outs, axis=1)
    fwd_d, bwd_d = bilstm(p, "triplet_lstm", tokens, batch)
    # final forward state (after the tail) and final backward state (after the head)
    q_prime = T.concat([fwd_d[2], bwd_d[0]], axis=1)
    return Encoding(outs[0], outs[1], outs[2], q, q_prime)


def encode_entity_view(p: dict[str, Tensor], triple):
    """``(e~_h, e~_r, e~_t, q)`` for one triple ``(h, r, t)``."""
    enc = encode(p, *triple)
    return enc.e_h, enc.e_r, enc.e_t, enc.q


def encode_triplet_view(p: dict[str, Tensor], triple) -> Tensor:
    return encode(p, *triple).q_prime


def encode_all(store: ParamStore, h, r, t, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode ``(q, q')`` arrays for many triples."""
    p = store.frozen()
    h, r, t = (np.asarray(a, dtype=np.int64) for a in (h, r, t))
    qs, qps = [], []
    for s in range(0, h.size, chunk):
        enc = encode(p, h[s : s + chunk], r[s : s + chunk], t[s : s + chunk])
        qs.append(enc.q.data)
        qps.append(enc.q_prime.data)
    return np.concatenate(qs), np.concatenate(qps)


def mlp(p: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    """One relu hidden layer of width n, then a linear scalar output; returns (B,)."""
    hidden = T.relu(T.matmul(x, p[f"{name}.W1"]) + p[f"{name}.b1"])
    out = T.matmul(hidden, p[f"{name}.W2"]) + p[f"{name}.b2"]
    return T.reshape(out, (out.shape[0],))


def aggregate(anchor: Tensor, table: Tensor, idx, use_sigmoid: bool = False,
              plan=None) -> Tensor:
    """Attention-weighted sum of each anchor's neighbour rows ``table[idx[b]]``."""
    z = T.attend(anchor, table, idx, plan)
    return T.sigmoid(z) if use_sigmoid else z


def aggregate_neighbors(anchor_vec, neighbor_vecs, use_sigmoid: bool = False) -> Tensor:
    """Aggregate a single anchor vector over ``m`` neighbour vectors."""
    anchor = T.as_tensor(anchor_vec)
    nbrs = T.as_tensor(neighbor_vecs)
    if nbrs.data.ndim != 2 or anchor.data.ndim != 1:
        raise T.ShapeError("expected a 1-d anchor and a 2-d stack of neighbours")
    if nbrs.shape[1] != anchor.shape[0]:
        raise T.ShapeError(f"anchor width {anchor.shape[0]} != neighbour width {nbrs.shape[1]}")
    z = aggregate(T.reshape(anchor, (1, anchor.shape[0])), nbrs,
                  np.arange(nbrs.shape[0])[None, :], use_sigmoid)
    return T.reshape(z, (anchor.shape[0],))


def attention_weights(anchor_vec, neighbor_vecs) -> np.ndarray:
    anchor = np.asarray(anchor_vec, dtype=np.float64)
    nbrs = np.asarray(neighbor_vecs, dtype=np.float64)
    return T.softmax_array(nbrs @ anchor)
