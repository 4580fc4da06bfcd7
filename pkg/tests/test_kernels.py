import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aoigpr import kernels
from oracles import halfint_kernel, matern_dense

BACKENDS = kernels.available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    before = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(before)


def test_compiled_backend_is_built():
    # the extension is part of the normal install; the fallback is for AOIGPR_NO_EXT builds
    assert "cython" in BACKENDS
    assert kernels.BACKEND == "cython"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_halfinteger_closed_forms(backend, nu):
    rng = np.random.default_rng(1)
    X1, X2 = rng.normal(size=(7, 4)), rng.normal(size=(5, 4))
    K = kernels.matern_cross(X1, X2, 1.3, 0.7, nu)
    r = np.sqrt(((X1[:, None, :] - X2[None, :, :]) ** 2).sum(-1))
    np.testing.assert_allclose(K, halfint_kernel(r, 1.3, 0.7, nu), rtol=1e-12, atol=0)


@pytest.mark.parametrize("nu", [0.3, 0.8, 1.5, 3.7])
def test_general_nu_matches_bessel_definition(nu):
    r = np.array([0.0, 1e-3, 0.2, 1.0, 2.5, 7.0])
    X1 = np.zeros((1, 1))
    X2 = r[:, None]
    got = kernels.matern_cross(X1, X2, 2.0, 1.1, nu)[0]
    want = [matern_dense(x, 2.0, 1.1, nu) for x in r]
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-300)


def test_general_path_agrees_with_closed_form():
    r = np.linspace(0, 5, 40)
    for nu in (0.5, 1.5, 2.5):
        s = kernels.argument_scale(nu, 0.9)
        np.testing.assert_allclose(kernels.matern_from_distance(r, 1.7, nu, s),
                                   halfint_kernel(r, 1.7, 0.9, nu), rtol=1e-10)


def test_standard_scaling_switch():
    assert kernels.argument_scale(0.5, 1.0) == pytest.approx(math.sqrt(2))
    assert kernels.argument_scale(0.5, 1.0, standard=True) == pytest.approx(1.0)
    X1, X2 = np.zeros((1, 2)), np.array([[0.6, 0.8]])
    assert kernels.matern_cross(X1, X2, 1.0, 1.0, 0.5, True)[0, 0] == pytest.approx(math.exp(-1))
    assert kernels.matern_cross(X1, X2, 1.0, 1.0, 0.5)[0, 0] == pytest.approx(math.exp(-math.sqrt(2)))


def test_far_tail_is_zero_not_nan():
    got = kernels.matern_cross(np.zeros((1, 1)), np.array([[1e6]]), 1.0, 1.0, 0.8)
    assert got[0, 0] == 0.0


@given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 22), st.integers(0, 2**32 - 1),
       st.sampled_from([0.5, 1.5, 2.5]), st.floats(0.01, 100), st.floats(0.01, 100))
def test_backends_agree(n1, n2, dim, seed, nu, h, lam):
    rng = np.random.default_rng(seed)
    X1, X2 = rng.normal(size=(n1, dim)), rng.normal(size=(n2, dim))
    out = {}
    before = kernels.BACKEND
    for b in BACKENDS:
        kernels.use_backend(b)
        out[b] = (kernels.pairwise_dist(X1, X2), kernels.matern_cross(X1, X2, h, lam, nu))
    kernels.use_backend(before)
    ref_d, ref_k = out["numpy"]
    for d, k in out.values():
        np.testing.assert_allclose(d, ref_d, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(k, ref_k, rtol=1e-12, atol=1e-300)


def test_pairwise_dist_self_is_exactly_zero(backend):
    X = np.random.default_rng(3).normal(size=(6, 21))
    D = kernels.pairwise_dist(X, X)
    assert np.all(np.diag(D) == 0.0)
    np.testing.assert_allclose(D, D.T, rtol=0, atol=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_gram_block_matches_cross_block(backend, nu):
    X = np.random.default_rng(6).uniform(-1, 1, size=(40, 9))
    G = kernels.matern_cross(X, X, 3.0, 0.8, nu)
    np.testing.assert_array_equal(G, kernels.matern_cross(X, X.copy(), 3.0, 0.8, nu))
    np.testing.assert_array_equal(G, G.T)
    assert np.all(np.diag(G) == 9.0)
