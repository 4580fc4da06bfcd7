"""numpy implementations of the compiled kernels in ``_ckernels``."""

import numpy as np


def pairwise_dist(X1, X2):
    n1 = np.einsum("ij,ij->i", X1, X1)[:, None]
    n2 = np.einsum("ij,ij->i", X2, X2)[None, :]
    sq = n1 + n2 - 2.0 * (X1 @ X2.T)
    # the expansion cancels badly when |a-b|^2 << |a|^2+|b|^2; redo those pairs directly
    np.maximum(sq, 0.0, out=sq)
    small = sq < 1e-2 * (n1 + n2)
    if small.any():
        i, j = np.nonzero(small)
        sq[i, j] = ((X1[i] - X2[j]) ** 2).sum(axis=1)
    return np.sqrt(sq)


def cross_halfint(X1, X2, h2, scale, order):
    z = scale * pairwise_dist(X1, X2)
    if order == 0:
        poly = 1.0
    elif order == 1:
        poly = 1.0 + z
    else:
        poly = 1.0 + z + z * z / 3.0
    return h2 * poly * np.exp(-z)


def gram_halfint(X, h2, scale, order):
    return cross_halfint(X, X, h2, scale, order)
