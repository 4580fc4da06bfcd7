"""Reference implementations used only by the tests.

None of these import the package under test; they are deliberately slow and
direct (dense inverses, exhaustive enumeration, arbitrary precision).
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


# --- covariance -------------------------------------------------------------

def matern_dense(r, h, lam, nu, standard=False):
    """Matern covariance of a distance, straight from the Bessel definition (mpmath)."""
    r = float(r)
    if r == 0.0:
        return h * h
    s = math.sqrt(2 * nu) if standard else 2 * math.sqrt(nu)
    z = mpmath.mpf(s) * r / lam
    val = mpmath.mpf(2) ** (1 - nu) / mpmath.gamma(nu) * z ** nu * mpmath.besselk(nu, z)
    return h * h * float(val)


def exp_kernel(r, h, lam):
    """nu = 1/2 with the 2 sqrt(nu) scaling: h^2 exp(-sqrt(2) r / lam)."""
    return h * h * np.exp(-math.sqrt(2.0) * np.asarray(r, dtype=float) / lam)


def halfint_kernel(r, h, lam, nu, standard=False):
    """Closed forms for nu in {1/2, 3/2, 5/2}, written out term by term."""
    r = np.asarray(r, dtype=float)
    s = math.sqrt(2 * nu) if standard else 2 * math.sqrt(nu)
    z = s * r / lam
    if nu == 0.5:
        poly = np.ones_like(z)
    elif nu == 1.5:
        poly = 1 + z
    elif nu == 2.5:
        poly = 1 + z + z ** 2 / 3
    else:
        raise ValueError(nu)
    return h * h * poly * np.exp(-z)


def dense_cov(XA, XB, h, lam, nu):
    XA, XB = np.atleast_2d(XA), np.atleast_2d(XB)
    out = np.empty((len(XA), len(XB)))
    for i, a in enumerate(XA):
        for j, b in enumerate(XB):
            r = math.sqrt(sum((float(u) - float(v)) ** 2 for u, v in zip(a, b)))
            out[i, j] = halfint_kernel(r, h, lam, nu) if nu in (0.5, 1.5, 2.5) \
                else matern_dense(r, h, lam, nu)
    return out


# --- Gaussian conditioning ----------------------------------------------------

def condition_gaussian(X, y, x_star, h, lam, nu, sigma_j):
    """Posterior of y* from the joint (n+1)-variate zero-mean Gaussian.

    Builds the full joint covariance and conditions with an explicit inverse.
    """
    Xall = np.vstack([X, np.atleast_2d(x_star)])
    S = dense_cov(Xall, Xall, h, lam, nu)
    n = len(X)
    S[:n, :n] += sigma_j ** 2 * np.eye(n)
    Saa, Sab, Sbb = S[:n, :n], S[:n, n], S[n, n]
    inv = np.linalg.inv(Saa)
    mu = Sab @ inv @ y
    var = Sbb - Sab @ inv @ Sab
    return float(mu), float(var)


def gaussian_logpdf(X, y, h, lam, nu, sigma_j):
    """log N(y; 0, C + sigma_j^2 I) via dense inverse and slogdet."""
    C = dense_cov(X, X, h, lam, nu) + sigma_j ** 2 * np.eye(len(X))
    sign, logdet = np.linalg.slogdet(C)
    assert sign > 0
    q = y @ np.linalg.inv(C) @ y
    return float(-0.5 * q - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi))


# --- action counts ------------------------------------------------------------

def brute_force_count(N, L, p, P_max):
    """Enumerate {0..L}^N and keep vectors within the power budget."""
    step = p / L
    return sum(1 for v in itertools.product(range(L + 1), repeat=N)
               if sum(v) * step <= P_max * (1 + 1e-12))


def brute_force_actions(N, L, p, P_max):
    step = p / L
    return [v for v in itertools.product(range(L + 1), repeat=N)
            if sum(v) * step <= P_max * (1 + 1e-12)]


def formula_count(N, L, p, P_max):
    """Vectors in {0..L}^N with sum <= B, by inclusion-exclusion over capped entries."""
    B = min(N * L, math.floor(P_max * L / p * (1 + 1e-12)))
    total = 0
    for s in range(B + 1):
        for j in range(N + 1):
            m = s - j * (L + 1)
            if m < 0:
                break
            total += (-1) ** j * math.comb(N, j) * math.comb(m + N - 1, N - 1)
    return total


# --- tail probability ---------------------------------------------------------

def erfc_tail(mu, sigma2, d, dps=40):
    with mpmath.workdps(dps):
        return float(mpmath.erfc((mpmath.mpf(d) - mu) / mpmath.sqrt(2 * mpmath.mpf(sigma2))) / 2)


def monte_carlo_tail(mu, sigma2, d, n, rng, chunk=2_000_000):
    """Fraction of N(mu, sigma2) draws above d, and its standard error."""
    hits = 0
    left = n
    sd = math.sqrt(sigma2)
    while left:
        m = min(chunk, left)
        hits += int(np.count_nonzero(rng.standard_normal(m) * sd + mu > d))
        left -= m
    p = hits / n
    return p, math.sqrt(max(p * (1 - p), 1.0 / n) / n)


# --- queue / AoI --------------------------------------------------------------

def scalar_queue(Q0, rates, A):
    """The packet-count recursion Q(t+1) = max(Q(t) - R(t), 0) + A."""
    Q = [Q0]
    for R in rates:
        Q.append(max(Q[-1] - R, 0.0) + A)
    return Q
