import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.stats import ortho_group

from rupclass.numerics import (
    NotPositiveDefiniteError,
    NotSymmetricError,
    canonical_signs,
    mvn_logdensity,
    mvn_logpdf,
    svd,
    sym_eigen,
)


def test_identity_eigen():
    e = sym_eigen(np.eye(3))
    np.testing.assert_allclose(e.values, 1.0)
    np.testing.assert_allclose(e.vectors.T @ e.vectors, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("a, b", [(1.0, 0.3), (6.71, 2.09), (2.0, -0.7)])
def test_two_by_two_closed_form(a, b):
    # [[a, b], [b, a]] has eigenvalues a +- |b|
    e = sym_eigen(np.array([[a, b], [b, a]]))
    np.testing.assert_allclose(e.values, [a + abs(b), a - abs(b)], rtol=1e-14)


def test_equicorrelation_values():
    np.testing.assert_allclose(sym_eigen([[1, 0.3], [0.3, 1]]).values, [1.3, 0.7], rtol=1e-14)
    np.testing.assert_allclose(sym_eigen([[6.71, 2.09], [2.09, 6.71]]).values, [8.8, 4.62], rtol=1e-14)


def test_rejects_asymmetric():
    with pytest.raises(NotSymmetricError):
        sym_eigen([[1.0, 0.2], [0.3, 1.0]])
    with pytest.raises(NotSymmetricError):
        sym_eigen(np.ones((2, 3)))


def test_sign_convention():
    e = sym_eigen([[2.0, -1.0], [-1.0, 2.0]])
    first = e.vectors[np.argmax(np.abs(e.vectors) > 1e-12, axis=0), [0, 1]]
    assert np.all(first > 0)
    v = canonical_signs(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    np.testing.assert_array_equal(v, [[0.0, 1.0], [1.0, 0.0]])


@settings(max_examples=60, deadline=None)
@given(p=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_recovers_planted_spectrum(p, seed):
    rng = np.random.default_rng(seed)
    q = ortho_group.rvs(p, random_state=rng) if p > 1 else np.ones((1, 1))
    lam = np.exp(rng.uniform(-3, 3, size=p))
    m = (q * lam) @ q.T
    m = 0.5 * (m + m.T)
    e = sym_eigen(m)
    np.testing.assert_allclose(e.values, np.sort(lam)[::-1], rtol=1e-8)
    assert np.max(np.abs(e.vectors.T @ e.vectors - np.eye(p))) < 1e-10
    assert np.linalg.norm(e.reconstruct() - m) <= 1e-9 * np.linalg.norm(m)
    assert np.all(np.diff(e.values) <= 0)


@settings(max_examples=40, deadline=None)
@given(p=st.integers(1, 7), seed=st.integers(0, 2**32 - 1))
def test_matches_lapack(p, seed):
    a = np.random.default_rng(seed).normal(size=(p, p))
    m = a + a.T
    np.testing.assert_allclose(sym_eigen(m).values, np.linalg.eigvalsh(m)[::-1], atol=1e-11 * max(1, np.abs(m).max()))


def test_repeated_eigenvalues_are_orthonormal():
    q = ortho_group.rvs(4, random_state=3)
    m = (q * np.array([2.0, 2.0, 2.0, 1.0])) @ q.T
    e = sym_eigen(0.5 * (m + m.T))
    np.testing.assert_allclose(e.values, [2, 2, 2, 1], atol=1e-12)
    np.testing.assert_allclose(e.vectors.T @ e.vectors, np.eye(4), atol=1e-12)


def test_svd_examples():
    u, s, v = svd(np.eye(3))
    np.testing.assert_allclose(s, 1.0)
    np.testing.assert_allclose(np.abs(u @ v.T), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(svd(np.diag([3.0, 2.0]))[1], [3.0, 2.0])
    m = np.random.default_rng(0).normal(size=(4, 4))
    u, s, v = svd(m)
    np.testing.assert_allclose((u * s) @ v.T, m, atol=1e-12)


def test_logdensity_examples():
    assert mvn_logdensity([0, 0], [0, 0], np.eye(2)) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
    assert mvn_logdensity([1, 0], [0, 0], np.eye(2)) == pytest.approx(-np.log(2 * np.pi) - 0.5, abs=1e-12)
    sigma = np.array([[1.0, 0.3], [0.3, 1.0]])
    inv = np.array([[1.0, -0.3], [-0.3, 1.0]]) / 0.91
    x = np.array([1.0, 1.0])
    expected = -np.log(2 * np.pi) - 0.5 * np.log(0.91) - 0.5 * x @ inv @ x
    assert mvn_logdensity(x, [0, 0], sigma) == pytest.approx(expected, abs=1e-12)


def test_logdensity_errors():
    with pytest.raises(NotPositiveDefiniteError):
        mvn_logdensity([0, 0], [0, 0], np.diag([1.0, 0.0]))
    with pytest.raises(NotPositiveDefiniteError):
        mvn_logdensity([0, 0], [0, 0], np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        mvn_logdensity([0, 0, 0], [0, 0], np.eye(2))


@settings(max_examples=30, deadline=None)
@given(p=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_rowwise_matches_scipy(p, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(p, p))
    sigma = a @ a.T + 0.5 * np.eye(p)
    mu = rng.normal(size=p)
    x = rng.normal(size=(20, p)) * 3
    e = sym_eigen(sigma)
    np.testing.assert_allclose(mvn_logpdf(x, mu, e.values, e.vectors),
                               stats.multivariate_normal(mu, sigma).logpdf(x).reshape(-1), rtol=1e-10, atol=1e-10)


def test_density_integrates_to_one():
    one_d = integrate.quad(lambda t: np.exp(mvn_logdensity([t], [0.5], [[2.0]])), -30, 30)[0]
    assert one_d == pytest.approx(1.0, abs=1e-3)
    sigma = np.array([[1.0, 0.3], [0.3, 1.0]])
    e = sym_eigen(sigma)
    g = np.linspace(-8, 8, 641)
    xx, yy = np.meshgrid(g, g)
    dens = np.exp(mvn_logpdf(np.column_stack([xx.ravel(), yy.ravel()]), np.zeros(2), e.values, e.vectors))
    total = dens.sum() * (g[1] - g[0]) ** 2
    assert total == pytest.approx(1.0, abs=1e-3)
