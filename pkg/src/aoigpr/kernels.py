"""Matérn covariance evaluation with a compiled fast path.

The Cython module ``_ckernels`` is used when it was built; otherwise (or when
``AOIGPR_PURE_PYTHON`` is set) the numpy versions in ``_pykernels`` are used.
``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy import special

from . import _pykernels

_c = None
if not os.environ.get("AOIGPR_PURE_PYTHON"):
    try:
        from . import _ckernels as _c
    except ImportError:  # extension not built
        _c = None

_impl = _c if _c is not None else _pykernels
BACKEND = "cython" if _c is not None else "numpy"

# nu -> order of the polynomial factor in the closed form
_HALF_INT = {0.5: 0, 1.5: 1, 2.5: 2}


def use_backend(name: str) -> None:
    """Switch implementation at runtime ("cython" or "numpy"); for benchmarks/tests."""
    global _impl, BACKEND
    if name == "cython":
        if _c is None:
            raise RuntimeError("compiled kernels are not available")
        _impl = _c
    elif name == "numpy":
        _impl = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def available_backends() -> list[str]:
    return ["numpy"] + (["cython"] if _c is not None else [])


def argument_scale(nu: float, lam: float, standard: bool = False) -> float:
    """Factor turning a distance into the Bessel argument z.

    Default is ``2 sqrt(nu) / lam``; ``standard=True`` gives the textbook
    ``sqrt(2 nu) / lam``.
    """
    return (math.sqrt(2.0 * nu) if standard else 2.0 * math.sqrt(nu)) / lam


def matern_from_distance(r, h: float, nu: float, scale: float):
    """h^2 2^(1-nu)/Gamma(nu) z^nu K_nu(z), z = scale*r, using scipy's K_nu."""
    z = scale * np.asarray(r, dtype=float)
    out = np.full(z.shape, h * h)
    pos = z > 0
    if np.any(pos):
        zp = z[pos]
        with np.errstate(under="ignore", over="ignore", invalid="ignore"):
            log_coef = (1.0 - nu) * math.log(2.0) - special.gammaln(nu)
            vals = np.exp(log_coef + nu * np.log(zp)) * special.kv(nu, zp)
        # K_nu underflows to 0 (or 0*inf -> nan) far out in the tail
        vals = np.where(np.isfinite(vals), vals, 0.0)
        out[pos] = h * h * vals
    return out


def pairwise_dist(X1, X2):
    X1 = np.ascontiguousarray(X1, dtype=np.float64)
    X2 = np.ascontiguousarray(X2, dtype=np.float64)
    return _impl.pairwise_dist(X1, X2)


def matern_cross(X1, X2, h: float, lam: float, nu: float, standard: bool = False,
                 closed_form: bool = True):
    """Covariance matrix between row sets ``X1`` (n x D) and ``X2`` (m x D)."""
    same = X1 is X2
    X1 = np.ascontiguousarray(X1, dtype=np.float64)
    X2 = X1 if same else np.ascontiguousarray(X2, dtype=np.float64)
    scale = argument_scale(nu, lam, standard)
    order = _HALF_INT.get(float(nu)) if closed_form else None
    if order is not None:
        if same:  # Gram block: symmetric, exact h^2 diagonal
            return _impl.gram_halfint(X1, h * h, scale, order)
        return _impl.cross_halfint(X1, X2, h * h, scale, order)
    return matern_from_distance(_impl.pairwise_dist(X1, X2), h, nu, scale)
