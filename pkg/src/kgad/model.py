"""Full dual-channel forward pass for a set of triples and their neighbour lists."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import Encoding, aggregate, encode, encode_all, mlp
from .kernels import GroupPlan
from .objective import TripleScoreParts, ViewScores, triple_score
from .tensor import ParamStore, Tensor


@dataclass
class NeighbourRows:
    """Neighbour lists of a set of triples, as rows of a neighbour table.

    ``head_keys``/``tail_keys`` name the bucket each row was drawn from; rows
    sharing a key are attended to together.
    """

    head_idx: np.ndarray     # (B, m)
    tail_idx: np.ndarray
    head_keys: np.ndarray    # (B,)
    tail_keys: np.ndarray

    def plans(self) -> tuple[GroupPlan, GroupPlan]:
        return GroupPlan(self.head_idx, self.head_keys), GroupPlan(self.tail_idx, self.tail_keys)


@dataclass
class Forward:
    enc: Encoding
    parts: TripleScoreParts
    z1: Tensor
    z2: Tensor
    z3: Tensor
    z4: Tensor
    score: Tensor


def corpus_table(store: ParamStore, heads, rels, tails) -> tuple[Tensor, Tensor]:
    """Untracked ``(q, q')`` encodings of every given triple, used as neighbour rows."""
    q, qp = encode_all(store, heads, rels, tails)
    return T.Tensor(q), T.Tensor(qp)


def forward(p: dict[str, Tensor], h, r, t, nbrs: NeighbourRows, table_q: Tensor,
            table_qp: Tensor, alpha: float, use_sigmoid: bool = False) -> Forward:
    """Encode triples, aggregate their head/tail neighbours in both views, score them."""
    enc = encode(p, h, r, t)
    head_plan, tail_plan = nbrs.plans()
    z1 = aggregate(enc.q, table_q, nbrs.head_idx, use_sigmoid, head_plan)
    z2 = aggregate(enc.q, table_q, nbrs.tail_idx, use_sigmoid, tail_plan)
    z3 = aggregate(enc.q_prime, table_qp, nbrs.head_idx, use_sigmoid, head_plan)
    z4 = aggregate(enc.q_prime, table_qp, nbrs.tail_idx, use_sigmoid, tail_plan)
    parts = TripleScoreParts(
        f_bilstm=T.l2_norm(enc.e_h + enc.e_r - enc.e_t),
        f_bilstm_d=mlp(p, "mlp1", enc.q_prime),
        sim_entity=T.dot(z1, z2),
        sim_triplet=T.dot(z3, z4),
    )
    return Forward(enc, parts, z1, z2, z3, z4, triple_score(parts, alpha))


def view_scores(p: dict[str, Tensor], fw: Forward, rows: int) -> ViewScores:
    """Per-view scores of the first ``rows`` triples of a forward pass."""
    def first(x):
        return T.slice_rows(x, 0, rows)

    return ViewScores(
        entity_scores=first(fw.parts.f_bilstm),
        triplet_scores=first(fw.parts.f_bilstm_d),
        head_entity=mlp(p, "mlp2", first(fw.z1)),
        head_triplet=mlp(p, "mlp3", first(fw.z3)),
        tail_entity=mlp(p, "mlp2", first(fw.z2)),
        tail_triplet=mlp(p, "mlp3", first(fw.z4)),
    )
