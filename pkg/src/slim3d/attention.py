"""Masked scaled dot-product attention, dense and sparse-gather variants.

Blocked entries are excluded from the softmax instead of being shifted by
``-inf``: the row maximum is taken over allowed entries only and blocked
weights are written as exact zeros.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def _allow_array(mask):
    return np.asarray(getattr(mask, "allow", mask), dtype=bool)


def masked_softmax(scores: np.ndarray, allow: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to ``allow``.

    ``allow`` broadcasts against ``scores``. Rows with no allowed entry are a
    contract violation.
    """
    allow = np.broadcast_to(allow, scores.shape)
    if not np.all(allow.any(axis=-1)):
        raise ContractViolation("attention row with every entry blocked")
    masked = np.where(allow, scores, -np.finfo(scores.dtype).max)
    shift = masked.max(axis=-1, keepdims=True)
    e = np.exp(np.where(allow, scores - shift, 0.0)) * allow
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(Q, K, mask) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    allow = _allow_array(mask)
    if allow.shape != (Q.shape[0], K.shape[0]):
        raise ContractViolation(f"mask shape {allow.shape} does not match {Q.shape[0]}x{K.shape[0]}")
    return masked_softmax(Q @ K.T / np.sqrt(Q.shape[1]), allow)


def masked_attention(Q, K, V, mask) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d) + M) V`` with ``M`` given by a boolean mask."""
    return attention_weights(Q, K, mask) @ np.asarray(V, dtype=np.float64)


class SparsePattern:
    """Row-compressed list of allowed ``(row, col)`` pairs of a mask."""

    def __init__(self, mask):
        allow = _allow_array(mask)
        counts = allow.sum(axis=1)
        if np.any(counts == 0):
            raise ContractViolation("attention row with every entry blocked")
        self.shape = allow.shape
        self.rows, self.cols = np.nonzero(allow)
        self.indptr = np.concatenate([[0], np.cumsum(counts)])
        self.starts = self.indptr[:-1]

    @property
    def nnz(self) -> int:
        return self.rows.size


def sparse_masked_attention(Q, K, V, mask_or_pattern) -> np.ndarray:
    """Same result as :func:`masked_attention`, touching only allowed pairs."""
    pat = mask_or_pattern if isinstance(mask_or_pattern, SparsePattern) else SparsePattern(mask_or_pattern)
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if pat.shape != (Q.shape[0], K.shape[0]):
        raise ContractViolation("mask shape does not match Q/K")
    s = np.einsum("ij,ij->i", Q[pat.rows], K[pat.cols]) / np.sqrt(Q.shape[1])
    s -= np.maximum.reduceat(s, pat.starts)[pat.rows]
    w = np.exp(s)
    w /= np.add.reduceat(w, pat.starts)[pat.rows]
    return np.add.reduceat(w[:, None] * V[pat.cols], pat.starts, axis=0)


def reachability(mask) -> np.ndarray:
    """Transitive closure of the attention graph (``p`` reads from ``q``) over any number of layers."""
    a = _allow_array(mask).astype(np.int64)
    reach = a > 0
    while True:
        nxt = (reach.astype(np.int64) @ a) > 0
        nxt |= reach
        if np.array_equal(nxt, reach):
            return reach
        reach = nxt


def reachable_within(mask, n_layers: int) -> np.ndarray:
    """Positions ``q`` that can influence ``p`` through ``n_layers`` attention layers."""
    a = _allow_array(mask)
    reach = np.eye(a.shape[0], dtype=bool)
    ai = a.astype(np.int64)
    for _ in range(n_layers):
        reach = reach | ((reach.astype(np.int64) @ ai) > 0)
    return reach
