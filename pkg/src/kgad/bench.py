"""Micro-benchmarks of encoding and neighbour aggregation throughput."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .encoders import encode_all, init_params


@dataclass
class Timing:
    name: str
    seconds: float
    items: int

    @property
    def per_second(self) -> float:
        return self.items / self.seconds if self.seconds > 0 else float("inf")

    def line(self) -> str:
        return f"{self.name:34s} {self.seconds * 1e3:9.2f} ms  {self.per_second:12.0f} rows/s"


def _best_of(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def attention_problem(batch: int, m: int, dim: int, n_table: int, n_buckets: int, seed: int = 0):
    """Random anchors/table and bucket-structured neighbour lists."""
    rng = np.random.default_rng(seed)
    anchor = rng.normal(scale=0.3, size=(batch, dim))
    table = rng.normal(scale=0.3, size=(n_table, dim))
    owner = rng.integers(n_buckets, size=n_table)
    buckets = [np.flatnonzero(owner == b) for b in range(n_buckets)]
    keys = rng.integers(n_buckets, size=batch)
    rows = []
    for k in keys:
        b = buckets[k] if buckets[k].size else np.array([0])
        if b.size > m:
            rows.append(rng.choice(b, size=m, replace=False))
        else:
            rows.append(np.concatenate([b, rng.choice(b, size=m - b.size)]))
    return anchor, table, np.stack(rows), keys


def bench_attention(batch: int = 512, m: int = 204, dim: int = 300, n_table: int = 11220,
                    n_buckets: int = 104, repeat: int = 3) -> list[Timing]:
    """Forward+backward of every attention implementation on one problem."""
    anchor, table, idx, keys = attention_problem(batch, m, dim, n_table, n_buckets)
    gz = np.ones_like(anchor)
    out = []

    def fused(fwd, bwd):
        def run():
            z, a = fwd(anchor, table, idx)
            bwd(anchor, table, idx, a, z, gz, False)
        return run

    out.append(Timing("per-row numpy", _best_of(fused(kernels.np_attend_forward,
                                                      kernels.np_attend_backward), repeat), batch))
    if kernels.BACKEND == "cython":
        out.append(Timing("per-row compiled", _best_of(fused(kernels.attend_forward,
                                                             kernels.attend_backward), repeat), batch))

    def grouped(fwd, bwd):
        def run():
            plan = kernels.GroupPlan(idx, keys)
            z, w = fwd(anchor, table, plan)
            bwd(anchor, table, plan, w, z, gz, False)
        return run

    out.append(Timing("grouped numpy", _best_of(grouped(kernels.np_grouped_forward,
                                                        kernels.np_grouped_backward), repeat), batch))
    if kernels.BACKEND == "cython":
        out.append(Timing("grouped compiled", _best_of(grouped(kernels.grouped_attend_forward,
                                                               kernels.grouped_attend_backward),
                                                       repeat), batch))
    return out


def bench_encode(n_triples: int = 11220, dim: int = 100, n_entities: int = 104,
                 n_relations: int = 25, repeat: int = 3) -> Timing:
    rng = np.random.default_rng(0)
    store = init_params(n_entities, n_relations, dim, rng)
    h = rng.integers(n_entities, size=n_triples)
    r = rng.integers(n_relations, size=n_triples)
    t = rng.integers(n_entities, size=n_triples)
    return Timing(f"encode both views (n={dim})", _best_of(lambda: encode_all(store, h, r, t), repeat),
                  n_triples)


def run_all(dim: int = 100, batch: int = 512, m: int = 204, repeat: int = 3) -> list[Timing]:
    timings = [bench_encode(dim=dim, repeat=repeat)]
    timings += bench_attention(batch=batch, m=m, dim=3 * dim, repeat=repeat)
    return timings
