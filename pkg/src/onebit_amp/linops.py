"""Matrix-vector products with an optional order-invariant reduction.

BLAS sums products in an order tied to memory layout, so permuting the rows
or columns of ``H`` changes results in the last bits.  The canonical mode sorts
each row of products by magnitude before summing, which makes every reduction
a function of the multiset of products only: permutation and sign-flip
equivariance then hold bit for bit.  It is slower and meant for tests and
audits.
"""

from __future__ import annotations

import numpy as np


def _sorted_row_sums(products: np.ndarray) -> np.ndarray:
    order = np.argsort(np.abs(products), axis=-1, kind="stable")
    return np.take_along_axis(products, order, axis=-1).sum(axis=-1)


class LinearOps:
    def __init__(self, H: np.ndarray, canonical: bool = False):
        self.H = np.ascontiguousarray(H, dtype=float)
        self.HT = np.ascontiguousarray(self.H.T)
        self.canonical = canonical

    @property
    def shape(self) -> tuple[int, int]:
        return self.H.shape

    def mv(self, x: np.ndarray) -> np.ndarray:
        if self.canonical:
            return _sorted_row_sums(self.H * x[None, :])
        return self.H @ x

    def rmv(self, y: np.ndarray) -> np.ndarray:
        if self.canonical:
            return _sorted_row_sums(self.HT * y[None, :])
        return self.HT @ y

    def total(self, v: np.ndarray) -> float:
        if self.canonical:
            return float(_sorted_row_sums(v))
        return float(v.sum())

    def dot(self, u: np.ndarray, v: np.ndarray) -> float:
        if self.canonical:
            return self.total(u * v)
        return float(u @ v)

    def sq_norm(self, v: np.ndarray) -> float:
        return self.dot(v, v)
