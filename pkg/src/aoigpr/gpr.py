"""Zero-mean Gaussian-process regression over a sliding window of samples.

The covariance is the Matérn family

    c(x, x') = h^2 * 2^(1-nu) / Gamma(nu) * z^nu * K_nu(z),  z = 2 sqrt(nu) |x - x'| / lam

(``standard_scaling=True`` switches to the textbook ``z = sqrt(2 nu) r / lam``).
A small diagonal jitter ``sigma_j^2`` keeps the Gram matrix factorizable when
inputs repeat, which is common with a discrete action set.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize
from scipy.linalg import lapack

from . import kernels

_LOG_2PI = math.log(2.0 * math.pi)


class SingularKernelError(ArithmeticError):
    """The Gram matrix could not be factorized even after jitter escalation."""


class NumericalDomainError(ArithmeticError):
    """A covariance evaluation produced a non-finite value."""


@dataclass(frozen=True)
class KernelHyperparams:
    h: float
    lam: float
    nu: float = 0.5
    sigma_j: float = 0.0
    standard_scaling: bool = False

    def __post_init__(self):
        if not (self.h > 0 and self.lam > 0 and self.nu > 0 and self.sigma_j >= 0):
            raise ValueError(f"invalid kernel hyperparameters {self}")

    @property
    def prior_var(self) -> float:
        return self.h * self.h


class Sample(NamedTuple):
    x: np.ndarray
    y: float


class Posterior(NamedTuple):
    mu: float
    sigma2: float


class SlidingDataset:
    """FIFO window of at most ``capacity`` samples; the oldest is evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Sample] = deque()
        self._X: np.ndarray | None = None
        self._y: np.ndarray | None = None

    def push(self, sample: Sample) -> Sample | None:
        """Append ``sample``; return the evicted sample if the window overflowed."""
        x = np.asarray(sample.x, dtype=np.float64)
        if self._items and x.shape != self._items[0].x.shape:
            raise ValueError("sample dimension differs from window contents")
        self._items.append(Sample(x, float(sample.y)))
        evicted = self._items.popleft() if len(self._items) > self.capacity else None
        # slide the cached arrays instead of restacking the whole window
        keep = 1 if evicted is not None else 0
        if self._X is not None:
            self._X = np.concatenate([self._X[keep:], x[None, :]])
            self._X.flags.writeable = False
        if self._y is not None:
            self._y = np.concatenate([self._y[keep:], [float(sample.y)]])
            self._y.flags.writeable = False
        return evicted

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i) -> Sample:
        return self._items[i]

    @property
    def X(self) -> np.ndarray:
        if self._X is None:
            self._X = np.vstack([s.x for s in self._items])
            self._X.flags.writeable = False
        return self._X

    @property
    def y(self) -> np.ndarray:
        if self._y is None:
            self._y = np.fromiter((s.y for s in self._items), dtype=np.float64,
                                  count=len(self._items))
            self._y.flags.writeable = False
        return self._y


def push_sample(dataset: SlidingDataset, s: Sample) -> None:
    dataset.push(s)


def matern(x_i, x_j, theta: KernelHyperparams) -> float:
    xi = np.atleast_2d(np.asarray(x_i, dtype=np.float64))
    xj = np.atleast_2d(np.asarray(x_j, dtype=np.float64))
    if xi.shape[1] != xj.shape[1]:
        raise ValueError("inputs must have the same dimension")
    value = float(kernels.matern_cross(xi, xj, theta.h, theta.lam, theta.nu,
                                       theta.standard_scaling)[0, 0])
    if not math.isfinite(value):
        raise NumericalDomainError(f"non-finite covariance for {theta}")
    return value


def cov_matrix(X1, X2, theta: KernelHyperparams) -> np.ndarray:
    return kernels.matern_cross(X1, X2, theta.h, theta.lam, theta.nu, theta.standard_scaling)


def _cov_from_dist(R: np.ndarray, theta: KernelHyperparams) -> np.ndarray:
    scale = kernels.argument_scale(theta.nu, theta.lam, theta.standard_scaling)
    order = kernels._HALF_INT.get(float(theta.nu))
    if order is None:
        return kernels.matern_from_distance(R, theta.h, theta.nu, scale)
    z = scale * R
    poly = 1.0 if order == 0 else (1.0 + z if order == 1 else 1.0 + z + z * z / 3.0)
    return theta.h * theta.h * poly * np.exp(-z)


@dataclass
class GramFactor:
    """Cholesky factor of C + jitter*I for one window, reused by every query."""

    X: np.ndarray
    y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    theta: KernelHyperparams
    offset: float = 0.0
    _chol_inv: np.ndarray | None = field(default=None, repr=False)

    def predict_many(self, Xs) -> tuple[np.ndarray, np.ndarray]:
        Xs = np.atleast_2d(np.asarray(Xs, dtype=np.float64))
        Ks = cov_matrix(Xs, self.X, self.theta)
        mu = Ks @ self.alpha + self.offset
        v = self.chol_inv @ Ks.T
        var = self.theta.prior_var - np.einsum("ij,ij->j", v, v)
        np.maximum(var, 0.0, out=var)
        return mu, var

    @property
    def chol_inv(self) -> np.ndarray:
        """Inverse of the lower Cholesky factor, computed once per window."""
        if self._chol_inv is None:
            inv, info = lapack.dtrtri(self.chol, lower=1)
            if info != 0:
                raise SingularKernelError("Cholesky factor is not invertible")
            self._chol_inv = inv
        return self._chol_inv

    def predict(self, x_star) -> Posterior:
        mu, var = self.predict_many(np.atleast_2d(x_star))
        return Posterior(float(mu[0]), float(var[0]))

    def log_marginal_likelihood(self) -> float:
        yc = self.y - self.offset
        n = len(yc)
        return float(-0.5 * yc @ self.alpha
                     - np.log(np.diag(self.chol)).sum()
                     - 0.5 * n * _LOG_2PI)


def _factorize(C: np.ndarray, base_jitter: float, max_jitter: float):
    jitter = base_jitter
    diag = np.arange(C.shape[0])
    while True:
        A = C.copy()
        A[diag, diag] += jitter
        try:
            return linalg.cholesky(A, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            pass
        jitter *= 10.0
        if jitter == 0.0 or jitter > max_jitter * (1 + 1e-12):
            raise SingularKernelError(
                f"Gram matrix not positive definite (jitter up to {jitter / 10:g})")


def gram(dataset: SlidingDataset, theta: KernelHyperparams, *,
         max_jitter_ratio: float = 1e-2, center: bool = False) -> GramFactor:
    """Factorize the window's Gram matrix plus ``sigma_j^2`` on the diagonal.

    On failure the diagonal term is escalated x10 up to ``max_jitter_ratio*h^2``
    (a zero ``sigma_j`` therefore cannot be rescued).
    """
    if len(dataset) == 0:
        raise ValueError("gram of an empty dataset")
    X, y = dataset.X, dataset.y
    C = cov_matrix(X, X, theta)
    if not np.all(np.isfinite(C)):
        raise NumericalDomainError("non-finite Gram matrix")
    chol, jitter = _factorize(C, theta.sigma_j ** 2, max_jitter_ratio * theta.prior_var)
    offset = float(y.mean()) if center else 0.0
    alpha = linalg.cho_solve((chol, True), y - offset, check_finite=False)
    return GramFactor(X, y, chol, alpha, jitter, theta, offset)


def predict(dataset: SlidingDataset, theta: KernelHyperparams, x_star,
            factor: GramFactor | None = None) -> Posterior:
    if len(dataset) == 0:
        return Posterior(0.0, theta.prior_var)
    if factor is None:
        factor = gram(dataset, theta)
    return factor.predict(x_star)


def log_marginal_likelihood(dataset: SlidingDataset, theta: KernelHyperparams,
                            factor: GramFactor | None = None) -> float:
    if factor is None:
        factor = gram(dataset, theta)
    return factor.log_marginal_likelihood()


# --- hyperparameter fitting -------------------------------------------------

class FitResult(NamedTuple):
    theta: KernelHyperparams
    lml: float
    ok: bool


def default_bounds(theta: KernelHyperparams, ratio: float = 1e3, jitter_ratio: float = 1e-6):
    """Box ``[base/ratio, base*ratio]`` around (h, lam, sigma_j).

    A zero ``sigma_j`` is replaced by ``sqrt(jitter_ratio)*h`` as the base.
    """
    sj = theta.sigma_j if theta.sigma_j > 0 else math.sqrt(jitter_ratio) * theta.h
    base = np.array([theta.h, theta.lam, sj])
    return base / ratio, base * ratio


def _lml_dense(R, y, theta, offset=0.0):
    C = _cov_from_dist(R, theta)
    C[np.diag_indices_from(C)] += theta.sigma_j ** 2
    try:
        chol = linalg.cholesky(C, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return -math.inf
    yc = y - offset
    with np.errstate(over="ignore", invalid="ignore"):
        alpha = linalg.cho_solve((chol, True), yc, check_finite=False)
        val = -0.5 * yc @ alpha - np.log(np.diag(chol)).sum() - 0.5 * len(y) * _LOG_2PI
    return float(val) if math.isfinite(val) else -math.inf


def _log_simplex(v0, lo, hi, step: float = 1.0) -> np.ndarray:
    """Start simplex with edges of ``step`` (an e-fold) per log-parameter.

    scipy's default 5% perturbation is nearly degenerate for log-values close
    to zero; edges point inward where a bound is within reach.
    """
    pts = [v0]
    for i in range(len(v0)):
        v = v0.copy()
        room_up, room_down = hi[i] - v0[i], v0[i] - lo[i]
        if room_up >= step or room_up >= room_down:
            v[i] += min(step, room_up)
        else:
            v[i] -= min(step, room_down)
        pts.append(v)
    return np.array(pts)


def fit_hyperparams(dataset: SlidingDataset, theta_init: KernelHyperparams, bounds=None, *,
                    restarts: int = 3, max_evals: int = 200, rng=None,
                    center: bool = False) -> FitResult:
    """Maximize the log marginal likelihood over (log h, log lam, log sigma_j).

    Nelder-Mead from ``theta_init`` plus ``restarts - 1`` random starts drawn
    log-uniformly inside ``bounds``.  The result never has a lower likelihood
    than ``theta_init``.  When every evaluation is singular the initial
    hyperparameters come back with ``ok=False``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit hyperparameters on an empty dataset")
    if bounds is None:
        bounds = default_bounds(theta_init)
    lo = np.log(np.asarray(bounds[0], dtype=float))
    hi = np.log(np.asarray(bounds[1], dtype=float))

    X, y = dataset.X, dataset.y
    R = kernels.pairwise_dist(X, X)
    offset = float(y.mean()) if center else 0.0

    def unpack(v):
        h, lam, sj = np.exp(np.clip(v, lo, hi))
        return replace(theta_init, h=float(h), lam=float(lam), sigma_j=float(sj))

    def objective(v):
        val = _lml_dense(R, y, unpack(v), offset)
        return -val if math.isfinite(val) else 1e300

    best_theta = theta_init
    best = _lml_dense(R, y, theta_init, offset)
    if np.all(hi - lo <= 0):
        return FitResult(theta_init, best, math.isfinite(best))

    sj0 = theta_init.sigma_j if theta_init.sigma_j > 0 else math.exp(lo[2])
    starts = [np.clip(np.log([theta_init.h, theta_init.lam, sj0]), lo, hi)]
    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(restarts - 1):
        starts.append(rng.uniform(lo, hi))

    for v0 in starts:
        res = optimize.minimize(
            objective, v0, method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={"maxfev": max_evals, "xatol": 1e-3, "fatol": 1e-6,
                     "initial_simplex": _log_simplex(v0, lo, hi)},
        )
        cand = unpack(res.x)
        val = _lml_dense(R, y, cand, offset)
        if val > best:
            best, best_theta = val, cand
    return FitResult(best_theta, best, math.isfinite(best))
