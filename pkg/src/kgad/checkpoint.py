"""Binary checkpoint container for trained parameters.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"KGADCKPT"
    bytes 8..11   u32    format version (currently 1)
    bytes 12..19  u64    header length L
    next L bytes  UTF-8 JSON header
    remainder     raw little-endian float64 values of every parameter,
                  concatenated in header order, each in row-major layout

The header holds ``config`` (training settings), ``entities`` and
``relations`` (sha256 vocabulary fingerprints), ``n_entities``,
``n_relations`` and ``params`` (a list of ``{"name", "shape"}`` records).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .graph import KnowledgeGraph
from .tensor import ParamStore

MAGIC = b"KGADCKPT"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, store: ParamStore, graph: KnowledgeGraph,
                    config: dict | None = None, extra: dict | None = None) -> None:
    header = {
        "config": config or {},
        "entities": graph.entities.fingerprint(),
        "relations": graph.relations.fingerprint(),
        "n_entities": graph.n_entities,
        "n_relations": graph.n_relations,
        "params": [{"name": n, "shape": list(store[n].value.shape)} for n in store],
    }
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for n in store:
            fh.write(np.ascontiguousarray(store[n].value, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    offset = start + hlen
    store = ParamStore()
    for rec in header["params"]:
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated data for {rec['name']}")
        store.add(rec["name"], np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
                  .reshape(shape).astype(np.float64))
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return store, header


def check_vocab(header: dict, graph: KnowledgeGraph) -> None:
    """Raise :class:`CheckpointError` unless the checkpoint was trained on ``graph``'s vocabularies."""
    if (header.get("entities") != graph.entities.fingerprint()
            or header.get("relations") != graph.relations.fingerprint()):
        raise CheckpointError(
            "checkpoint vocabulary does not match the corpus "
            f"({header.get('n_entities')} entities / {header.get('n_relations')} relations "
            f"vs {graph.n_entities} / {graph.n_relations})"
        )
