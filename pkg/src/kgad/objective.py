"""Anomaly score, margin ranking loss and the cross-view KL consistency terms.

Every function accepts :class:`~kgad.tensor.Tensor` objects or plain arrays and
returns a Tensor, so the same code serves training (on a tape) and scoring.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeError, Tensor

KL_EPS = 1e-12


@dataclass
class TripleScoreParts:
    """Per-triple score components (scalars or equal-length batch vectors)."""

    f_bilstm: Tensor       # ||e~_h + e~_r - e~_t||
    f_bilstm_d: Tensor     # MLP1(q')
    sim_entity: Tensor     # z1 . z2
    sim_triplet: Tensor    # z3 . z4


@dataclass
class ViewScores:
    """Paired per-view scores that the consistency loss aligns."""

    entity_scores: Tensor
    triplet_scores: Tensor
    head_entity: Tensor
    head_triplet: Tensor
    tail_entity: Tensor
    tail_triplet: Tensor

    def __post_init__(self):
        lengths = {T.as_tensor(v).shape for v in self.__dict__.values()}
        if len(lengths) != 1:
            raise ShapeError(f"view score vectors differ in shape: {sorted(lengths)}")


def _check_weight(name: str, w: float) -> None:
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {w}")


def triple_score(parts: TripleScoreParts, alpha: float) -> Tensor:
    """``alpha * (f_bilstm + f_bilstm_d) + (1 - alpha) * (sim_entity + sim_triplet) / 2``."""
    _check_weight("alpha", alpha)
    internal = T.add(parts.f_bilstm, parts.f_bilstm_d)
    context = T.add(parts.sim_entity, parts.sim_triplet)
    return T.add(T.mul(internal, alpha), T.mul(context, 0.5 * (1.0 - alpha)))


def margin_loss(pos_scores, neg_scores, gamma: float, literal: bool = False) -> Tensor:
    """Hinge on batch means: ``max(0, mean(pos) - mean(neg) + gamma)``.

    Positives are pushed at least ``gamma`` below negatives, since a high score
    flags an anomaly. ``literal=True`` swaps the two means (ablation only).
    """
    pos, neg = T.as_tensor(pos_scores), T.as_tensor(neg_scores)
    if pos.shape != neg.shape:
        raise ShapeError(f"margin_loss: {pos.shape} positives vs {neg.shape} negatives")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    lo, hi = (neg, pos) if literal else (pos, neg)
    return T.relu(T.add(T.sub(T.mean(lo), T.mean(hi)), gamma))


def margin_loss_per_sample(pos_scores, neg_scores, gamma: float, literal: bool = False) -> Tensor:
    """Mean over pairs of ``max(0, pos_i - neg_i + gamma)``.

    Each positive is compared with its own negative, so the loss keeps a
    gradient until every pair is separated rather than only the batch means.
    """
    pos, neg = T.as_tensor(pos_scores), T.as_tensor(neg_scores)
    if pos.shape != neg.shape:
        raise ShapeError(f"margin_loss: {pos.shape} positives vs {neg.shape} negatives")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    lo, hi = (neg, pos) if literal else (pos, neg)
    return T.mean(T.relu(T.add(T.sub(lo, hi), gamma)))


def kl_divergence(p_logits, q_logits) -> Tensor:
    """``KL(softmax(p) || softmax(q))`` with the softmax taken over the batch axis."""
    p_logits, q_logits = T.as_tensor(p_logits), T.as_tensor(q_logits)
    if p_logits.shape != q_logits.shape:
        raise ShapeError(f"kl_divergence: shapes {p_logits.shape} and {q_logits.shape} differ")
    if p_logits.data.ndim != 1 or p_logits.shape[0] < 1:
        raise ShapeError("kl_divergence expects non-empty vectors")
    P = T.softmax(p_logits)
    Q = T.softmax(q_logits)
    log_ratio = T.sub(T.log(T.add(P, KL_EPS)), T.log(T.add(Q, KL_EPS)))
    return T.sum(T.mul(P, log_ratio))


def consistency_terms(vs: ViewScores) -> tuple[Tensor, Tensor, Tensor]:
    """The score, head-context and tail-context KL terms."""
    return (
        kl_divergence(vs.entity_scores, vs.triplet_scores),
        kl_divergence(vs.head_entity, vs.head_triplet),
        kl_divergence(vs.tail_entity, vs.tail_triplet),
    )


def consistency_loss(vs: ViewScores) -> Tensor:
    score, head, tail = consistency_terms(vs)
    return T.add(T.add(score, head), tail)


def total_loss(margin, consistency, beta: float) -> Tensor:
    _check_weight("beta", beta)
    return T.add(T.mul(margin, 1.0 - beta), T.mul(consistency, beta))
