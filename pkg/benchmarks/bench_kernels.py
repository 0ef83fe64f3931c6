"""Compare the compiled and pure-numpy attention kernels and time encoding.

Usage::

    python benchmarks/bench_kernels.py [--dim 100] [--batch 512] [--m 204] [--repeat 3]
"""
from __future__ import annotations

import argparse

import numpy as np

from kgad import kernels
from kgad.bench import attention_problem, run_all


def check_agreement(dim: int, batch: int, m: int) -> float:
    """Largest absolute difference between compiled and numpy grouped outputs."""
    anchor, table, idx, keys = attention_problem(batch, m, dim, 2000, 50, seed=1)
    plan = kernels.GroupPlan(idx, keys)
    z_ref, _ = kernels.np_grouped_forward(anchor, table, plan)
    z, _ = kernels.grouped_attend_forward(anchor, table, plan)
    return float(np.max(np.abs(z - z_ref)))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=100)
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--m", type=int, default=204)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    print(f"backend: {kernels.BACKEND}")
    if kernels.BACKEND == "cython":
        print(f"compiled vs numpy max |diff|: {check_agreement(3 * args.dim, 64, 16):.2e}")
    timings = run_all(dim=args.dim, batch=args.batch, m=args.m, repeat=args.repeat)
    for t in timings:
        print(t.line())
    by_name = {t.name: t.seconds for t in timings}
    for kind in ("per-row", "grouped"):
        if f"{kind} compiled" in by_name:
            print(f"{kind} speed-up: {by_name[f'{kind} numpy'] / by_name[f'{kind} compiled']:.1f}x")


if __name__ == "__main__":
    main()
