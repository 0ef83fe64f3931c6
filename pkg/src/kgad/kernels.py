"""Hot inner loops: neighbour attention and row scatter-add.

The compiled extension ``kgad._kernels`` is used when it can be imported; the
numpy implementations below are the fallback and the reference the extension is
tested against. Set ``KGAD_KERNELS=numpy`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np


def _np_softmax_rows(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def np_attend_forward(anchor: np.ndarray, table: np.ndarray, idx: np.ndarray):
    nbrs = table[idx]                                   # (B, m, D)
    scores = np.einsum("bmd,bd->bm", nbrs, anchor)
    alpha = _np_softmax_rows(scores)
    z = np.einsum("bm,bmd->bd", alpha, nbrs)
    return z, alpha


def np_attend_backward(anchor, table, idx, alpha, z, gz, need_table_grad: bool):
    nbrs = table[idx]
    gq = np.einsum("bmd,bd->bm", nbrs, gz)
    gs = alpha * (gq - (gz * z).sum(axis=1, keepdims=True))
    g_anchor = np.einsum("bm,bmd->bd", gs, nbrs)
    if not need_table_grad:
        return g_anchor, None
    contrib = alpha[:, :, None] * gz[:, None, :] + gs[:, :, None] * anchor[:, None, :]
    g_table = np.zeros_like(table)
    np_scatter_add_rows(g_table, idx.ravel(), contrib.reshape(idx.size, -1))
    return g_anchor, g_table


def np_scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    np.add.at(out, idx, src)


def _load_extension():
    if os.environ.get("KGAD_KERNELS", "").lower() == "numpy":
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_ext = _load_extension()
BACKEND = "cython" if _ext is not None else "numpy"


def attend_forward(anchor, table, idx):
    """Return ``(z, alpha)`` for dot-product attention of anchors over indexed rows."""
    if _ext is None:
        return np_attend_forward(anchor, table, idx)
    return _ext.attend_forward(
        np.ascontiguousarray(anchor), np.ascontiguousarray(table), np.ascontiguousarray(idx)
    )


def attend_backward(anchor, table, idx, alpha, z, gz, need_table_grad: bool):
    """Gradients of ``attend_forward`` w.r.t. anchors and (optionally) the table."""
    if _ext is None:
        return np_attend_backward(anchor, table, idx, alpha, z, gz, need_table_grad)
    return _ext.attend_backward(
        np.ascontiguousarray(anchor), np.ascontiguousarray(table), idx, alpha, z,
        np.ascontiguousarray(gz), need_table_grad,
    )


def scatter_add_rows(out, idx, src) -> None:
    """``out[idx[k]] += src[k]`` with repeated indices accumulating."""
    if _ext is None:
        np_scatter_add_rows(out, idx, src)
    else:
        _ext.scatter_add_rows(out, np.ascontiguousarray(idx, dtype=np.int64),
                              np.ascontiguousarray(src))


# -- grouped attention ----------------------------------------------------------
#
# Rows whose neighbours come from the same bucket share most candidates. Grouping
# them turns the per-row loops into dense matrix products over the group's
# distinct candidates, with each row's multiplicities as weights:
#   alpha_bj = c_bj exp(s_bj) / sum_k c_bk exp(s_bk)
# which is exactly softmax over the original (repeated) index list, merged.


class GroupPlan:
    """Row groups, their distinct candidate rows and per-row multiplicities.

    Stored flat: group ``g`` owns ``rows[row_ptr[g]:row_ptr[g+1]]`` and
    candidates ``cand[cand_ptr[g]:cand_ptr[g+1]]``; its ``(rows x cands)``
    multiplicity matrix is ``counts[cnt_ptr[g]:cnt_ptr[g+1]]`` in row-major order.
    """

    __slots__ = ("rows", "row_ptr", "cand", "cand_ptr", "counts", "cnt_ptr",
                 "n_rows", "max_rows", "max_cand")

    def __init__(self, idx: np.ndarray, keys: np.ndarray):
        idx = np.asarray(idx, dtype=np.int64)
        keys = np.asarray(keys, dtype=np.int64)
        if idx.ndim != 2 or keys.shape != (idx.shape[0],):
            raise ValueError(f"need one group key per row, got {keys.shape} for {idx.shape}")
        self.n_rows, m = idx.shape
        order = np.argsort(keys, kind="stable")
        starts = np.flatnonzero(np.r_[True, np.diff(keys[order]) != 0])
        gid = np.cumsum(np.r_[False, np.diff(keys[order]) != 0])     # group of each sorted row
        n_groups = starts.size
        self.rows = order
        self.row_ptr = np.r_[starts, self.n_rows].astype(np.int64)

        span = int(idx.max()) + 1 if idx.size else 1
        pair = np.repeat(gid, m) * span + idx[order].ravel()
        uniq, inv = np.unique(pair, return_inverse=True)
        self.cand = uniq % span
        self.cand_ptr = np.searchsorted(uniq // span, np.arange(n_groups + 1)).astype(np.int64)

        n_r = np.diff(self.row_ptr)
        n_c = np.diff(self.cand_ptr)
        self.cnt_ptr = np.r_[0, np.cumsum(n_r * n_c)].astype(np.int64)
        row_in_group = np.arange(self.n_rows) - self.row_ptr[gid]
        flat_g = np.repeat(gid, m)
        pos = (self.cnt_ptr[flat_g] + np.repeat(row_in_group, m) * n_c[flat_g]
               + inv.ravel() - self.cand_ptr[flat_g])
        self.counts = np.bincount(pos, minlength=int(self.cnt_ptr[-1])).astype(np.float64)
        self.max_rows = int(n_r.max())
        self.max_cand = int(n_c.max())

    def __len__(self) -> int:
        return int(self.row_ptr.size - 1)

    def groups(self):
        """Yield ``(rows, cand, counts_matrix, slice)`` per group."""
        for g in range(len(self)):
            rows = self.rows[self.row_ptr[g] : self.row_ptr[g + 1]]
            cand = self.cand[self.cand_ptr[g] : self.cand_ptr[g + 1]]
            sl = slice(self.cnt_ptr[g], self.cnt_ptr[g + 1])
            yield rows, cand, self.counts[sl].reshape(rows.size, cand.size), sl


def np_grouped_forward(anchor: np.ndarray, table: np.ndarray, plan: GroupPlan):
    z = np.empty_like(anchor)
    w_flat = np.empty_like(plan.counts)
    for rows, cand, counts, sl in plan.groups():
        nb = table[cand]
        s = anchor[rows] @ nb.T
        s -= np.where(counts > 0, s, -np.inf).max(axis=1, keepdims=True)
        w = counts * np.exp(np.minimum(s, 0.0))
        w /= w.sum(axis=1, keepdims=True)
        z[rows] = w @ nb
        w_flat[sl] = w.ravel()
    return z, w_flat


def np_grouped_backward(anchor, table, plan: GroupPlan, w_flat, z, gz, need_table_grad: bool):
    g_anchor = np.empty_like(anchor)
    g_table = np.zeros_like(table) if need_table_grad else None
    for rows, cand, counts, sl in plan.groups():
        w = w_flat[sl].reshape(counts.shape)
        nb = table[cand]
        g = gz[rows]
        gzz = (g * z[rows]).sum(axis=1, keepdims=True)
        gs = w * (g @ nb.T - gzz)
        g_anchor[rows] = gs @ nb
        if need_table_grad:
            # candidates are distinct within a group, so fancy-index += is safe
            g_table[cand] += w.T @ g + gs.T @ anchor[rows]
    return g_anchor, g_table


def grouped_attend_forward(anchor, table, plan: GroupPlan):
    """Return ``(z, w)``: the attention output and the flat merged weights."""
    if _ext is None:
        return np_grouped_forward(anchor, table, plan)
    return _ext.grouped_forward(
        np.ascontiguousarray(anchor), np.ascontiguousarray(table), plan.rows, plan.row_ptr,
        plan.cand, plan.cand_ptr, plan.counts, plan.cnt_ptr, plan.max_rows, plan.max_cand,
    )


def grouped_attend_backward(anchor, table, plan: GroupPlan, w, z, gz, need_table_grad: bool):
    if _ext is None:
        return np_grouped_backward(anchor, table, plan, w, z, gz, need_table_grad)
    return _ext.grouped_backward(
        np.ascontiguousarray(anchor), np.ascontiguousarray(table), plan.rows, plan.row_ptr,
        plan.cand, plan.cand_ptr, w, plan.cnt_ptr, z, np.ascontiguousarray(gz),
        plan.max_rows, plan.max_cand, need_table_grad,
    )
