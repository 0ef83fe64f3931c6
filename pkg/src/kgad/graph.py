"""Triple storage, vocabularies and head/tail adjacency indexes."""
from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class TripleFormatError(ValueError):
    """Raised for malformed triple files."""


class Vocab:
    """Bidirectional label <-> dense id map, ids assigned in first-seen order."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._ids: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self._ids.get(label)
        if idx is None:
            idx = len(self._labels)
            self._ids[label] = idx
            self._labels.append(label)
        return idx

    def id(self, label: str) -> int:
        return self._ids[label]

    def label(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._ids

    def fingerprint(self) -> str:
        return hashlib.sha256("\x1f".join(self._labels).encode()).hexdigest()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self._labels == other._labels


def _bucket_index(keys: np.ndarray, n_keys: int) -> tuple[np.ndarray, np.ndarray]:
    # CSR layout: ids of triples with key k live in order[offsets[k]:offsets[k+1]]
    order = np.argsort(keys, kind="stable").astype(np.int64)
    counts = np.bincount(keys, minlength=n_keys)
    offsets = np.zeros(n_keys + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, order


class KnowledgeGraph:
    """Immutable set of (head, relation, tail) id triples.

    Parameters
    ----------
    heads, relations, tails : array-like of int
        Parallel id arrays. Duplicate triples are not allowed here; use
        :func:`from_labeled_triples` to deduplicate raw input.
    entities, relations_vocab : Vocab
        Label vocabularies.
    """

    def __init__(self, heads, relations, tails, entities: Vocab, relations_vocab: Vocab):
        h = np.asarray(heads, dtype=np.int64)
        r = np.asarray(relations, dtype=np.int64)
        t = np.asarray(tails, dtype=np.int64)
        if not (h.shape == r.shape == t.shape) or h.ndim != 1:
            raise ValueError("heads, relations and tails must be 1-d arrays of equal length")
        n_e, n_r = len(entities), len(relations_vocab)
        if h.size and (h.min() < 0 or t.min() < 0 or h.max() >= n_e or t.max() >= n_e):
            raise ValueError("entity id out of range")
        if r.size and (r.min() < 0 or r.max() >= n_r):
            raise ValueError("relation id out of range")
        self.entities = entities
        self.relations = relations_vocab
        self._n_rel = n_r
        self._n_ent = n_e
        keys = self.pack(h, r, t)
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate triples in graph")
        self._membership = set(keys.tolist())
        for arr in (h, r, t):
            arr.setflags(write=False)
        self.heads, self.rels, self.tails = h, r, t
        self._head_offsets, self._head_order = _bucket_index(h, n_e)
        self._tail_offsets, self._tail_order = _bucket_index(t, n_e)
        for arr in (self._head_offsets, self._head_order, self._tail_offsets, self._tail_order):
            arr.setflags(write=False)

    # -- construction -------------------------------------------------------------

    @classmethod
    def from_labeled_triples(cls, rows: Iterable[Sequence[str]]) -> "KnowledgeGraph":
        ents, rels = Vocab(), Vocab()
        seen: set[tuple[int, int, int]] = set()
        hs, rs, ts = [], [], []
        dups = 0
        for h, r, t in rows:
            key = (ents.add(h), rels.add(r), ents.add(t))
            if key in seen:
                dups += 1
                continue
            seen.add(key)
            hs.append(key[0])
            rs.append(key[1])
            ts.append(key[2])
        if dups:
            log.warning("dropped %d duplicate triple(s)", dups)
        return cls(hs, rs, ts, ents, rels)

    # -- basic queries -------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.heads.size)

    @property
    def n_entities(self) -> int:
        return self._n_ent

    @property
    def n_relations(self) -> int:
        return self._n_rel

    def pack(self, h, r, t):
        """Encode triples as single integers for membership tests."""
        return (np.asarray(h, dtype=np.int64) * self._n_rel + r) * self._n_ent + t

    def triple(self, tid: int) -> tuple[int, int, int]:
        self._check_tid(tid)
        return int(self.heads[tid]), int(self.rels[tid]), int(self.tails[tid])

    def labeled(self, tid: int) -> tuple[str, str, str]:
        h, r, t = self.triple(tid)
        return self.entities.label(h), self.relations.label(r), self.entities.label(t)

    def contains(self, h: int, r: int, t: int) -> bool:
        return int((h * self._n_rel + r) * self._n_ent + t) in self._membership

    def contains_many(self, h, r, t) -> np.ndarray:
        keys = self.pack(h, r, t)
        member = self._membership
        return np.fromiter((k in member for k in keys.tolist()), dtype=bool, count=keys.size)

    def head_bucket(self, entity: int) -> np.ndarray:
        """Ids of all triples whose head is ``entity``."""
        return self._head_order[self._head_offsets[entity] : self._head_offsets[entity + 1]]

    def tail_bucket(self, entity: int) -> np.ndarray:
        """Ids of all triples whose tail is ``entity``."""
        return self._tail_order[self._tail_offsets[entity] : self._tail_offsets[entity + 1]]

    def head_degree(self) -> np.ndarray:
        return np.diff(self._head_offsets)

    def tail_degree(self) -> np.ndarray:
        return np.diff(self._tail_offsets)

    def fingerprint(self) -> str:
        """Content hash over vocabularies and triple order."""
        digest = hashlib.sha256()
        digest.update("\x1f".join(self.entities.labels).encode())
        digest.update(b"\x1e")
        digest.update("\x1f".join(self.relations.labels).encode())
        digest.update(b"\x1e")
        digest.update(np.stack([self.heads, self.rels, self.tails]).astype("<i8").tobytes())
        return digest.hexdigest()

    def same_as(self, other: "KnowledgeGraph") -> bool:
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and np.array_equal(self.heads, other.heads)
            and np.array_equal(self.rels, other.rels)
            and np.array_equal(self.tails, other.tails)
        )

    def _check_tid(self, tid: int) -> None:
        if not 0 <= tid < len(self):
            raise IndexError(f"triple id {tid} out of range [0, {len(self)})")


# -- file I/O -------------------------------------------------------------------


def read_rows(path: str | Path, n_fields: int = 3) -> list[list[str]]:
    """Read tab-separated rows, skipping blank lines and ``#`` comments."""
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields or any(f == "" for f in fields):
                raise TripleFormatError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, got {len(fields)}"
                )
            rows.append(fields)
    if not rows:
        raise TripleFormatError(f"{path}: no triples found")
    return rows


def load_triples(path: str | Path) -> KnowledgeGraph:
    """Load a ``head<TAB>relation<TAB>tail`` file into a :class:`KnowledgeGraph`."""
    return KnowledgeGraph.from_labeled_triples(read_rows(path, 3))


def save_triples(graph: KnowledgeGraph, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for tid in range(len(graph)):
            fh.write("\t".join(graph.labeled(tid)) + "\n")


# -- neighbour retrieval --------------------------------------------------------


def head_neighbors(g: KnowledgeGraph, tid: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` triples sharing ``tid``'s head entity (self-copies if there are none)."""
    h, _, _ = g.triple(tid)
    return neighbor_lists(g, [h], [tid], [tid], m, rng, "head")[0]


def tail_neighbors(g: KnowledgeGraph, tid: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` triples sharing ``tid``'s tail entity (self-copies if there are none)."""
    _, _, t = g.triple(tid)
    return neighbor_lists(g, [t], [tid], [tid], m, rng, "tail")[0]


def neighbor_lists(g: KnowledgeGraph, entities, exclude, fallback, m: int,
                   rng: np.random.Generator, side: str) -> np.ndarray:
    """Stack of ``len(entities)`` neighbour lists of width ``m``.

    Row ``i`` draws from the head (or tail) bucket of ``entities[i]`` minus
    triple ``exclude[i]`` (``-1`` excludes nothing). With more than ``m``
    candidates it takes ``m`` distinct ones; with 1 to ``m`` it takes every
    candidate once and tops up with draws with replacement; with none it
    repeats ``fallback[i]``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if side not in ("head", "tail"):
        raise ValueError(f"side must be 'head' or 'tail', got {side!r}")
    ent = np.atleast_1d(np.asarray(entities, dtype=np.int64))
    excl = np.atleast_1d(np.asarray(exclude, dtype=np.int64))
    fb = np.atleast_1d(np.asarray(fallback, dtype=np.int64))
    if not ent.shape == excl.shape == fb.shape:
        raise ValueError("entities, exclude and fallback must have equal lengths")
    if len(g) == 0:
        return np.repeat(fb[:, None], m, axis=1)
    if side == "head":
        offsets, order, owner = g._head_offsets, g._head_order, g.heads
    else:
        offsets, order, owner = g._tail_offsets, g._tail_order, g.tails
    start = offsets[ent]
    deg = offsets[ent + 1] - start

    # buckets list ids in ascending order, so (entity, id) pairs are globally sorted
    has = excl >= 0
    has[has] = owner[excl[has]] == ent[has]
    xpos = deg.copy()
    if has.any():
        composite = owner[order] * len(g) + order
        xpos[has] = np.searchsorted(composite, ent[has] * len(g) + excl[has]) - start[has]
    k = deg - has

    slot = np.arange(m)
    cand = np.zeros((ent.size, m), dtype=np.int64)
    big = k > m
    if big.any():
        kb = k[big]
        keys = rng.random((kb.size, int(kb.max())))
        keys[np.arange(keys.shape[1]) >= kb[:, None]] = np.inf
        cand[big] = np.argpartition(keys, m - 1, axis=1)[:, :m]
    some = (k >= 1) & ~big
    if some.any():
        ks = k[some][:, None]
        extra = (rng.random((ks.size, m)) * ks).astype(np.int64)
        cand[some] = np.where(slot < ks, slot, extra)
    pos = cand + (cand >= xpos[:, None])
    out = order[np.minimum(start[:, None] + pos, order.size - 1)]
    empty = k == 0
    out[empty] = fb[empty, None]
    return out


def mean_neighbor_count(g: KnowledgeGraph) -> int:
    """Ceil of the mean per-triple count of head plus tail neighbours, at least 1."""
    if len(g) == 0:
        raise ValueError("empty graph")
    per_triple = (g.head_degree()[g.heads] - 1) + (g.tail_degree()[g.tails] - 1)
    total = int(per_triple.sum())
    return max(1, -(-total // len(g)))
