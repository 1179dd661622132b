import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wettrack.numerics import (PRNG_ID, Rng, canonical_phase, check_hermitian, herm_eig_max,
                               sample_complex_gaussian, sample_rademacher_vec)


def random_hermitian(gen, m, scale=1.0):
    a = gen.standard_normal((m, m)) + 1j * gen.standard_normal((m, m))
    return scale * 0.5 * (a + a.conj().T)


# -- sampling ----------------------------------------------------------------

def test_zero_variance_gives_exact_zero():
    assert sample_complex_gaussian(Rng(1), 0.0) == 0


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        sample_complex_gaussian(Rng(1), -1e-3)


def test_complex_gaussian_second_moment():
    z = sample_complex_gaussian(Rng(3), 1.0, size=1_000_000)
    assert 0.98 <= np.mean(np.abs(z) ** 2) <= 1.02
    # circular symmetry: equal split between real and imaginary parts, no pseudo-covariance
    assert abs(np.var(z.real) - 0.5) < 0.01 and abs(np.var(z.imag) - 0.5) < 0.01
    assert abs(np.mean(z * z)) < 0.01


def test_same_seed_same_draw():
    assert sample_complex_gaussian(Rng(42), 1.0) == sample_complex_gaussian(Rng(42), 1.0)
    a = sample_rademacher_vec(Rng(42), 5)
    b = sample_rademacher_vec(Rng(42), 5)
    assert np.array_equal(a, b)


def test_spawned_streams_are_reproducible_and_distinct():
    r = Rng(9)
    a = r.spawn(1, 2).gen.standard_normal(4)
    b = Rng(9).spawn(1, 2).gen.standard_normal(4)
    c = Rng(9).spawn(1, 3).gen.standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert Rng.algorithm == PRNG_ID


def test_rademacher_support():
    v = sample_rademacher_vec(Rng(0), 3)
    assert v.shape == (3,)
    assert set(v.real.tolist()) <= {-1.0, 1.0}
    assert np.all(v.imag == 0)


def test_rademacher_mean():
    v = sample_rademacher_vec(Rng(5), 1, size=1_000_000)
    assert -0.01 <= v.real.mean() <= 0.01


def test_rademacher_rejects_zero_length():
    with pytest.raises(ValueError):
        sample_rademacher_vec(Rng(0), 0)


def test_seed_range():
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)
    Rng(2**64 - 1)


# -- eigen-extraction --------------------------------------------------------

def test_diagonal_matrix():
    lam, u = herm_eig_max(np.diag([2.0, 1.0]))
    assert lam == 2.0
    np.testing.assert_array_equal(u, [1, 0])


def test_rank_one_closed_form():
    h = np.array([1, 1j])
    lam, u = herm_eig_max(np.outer(h, h.conj()))
    assert lam == pytest.approx(2.0, abs=1e-14)
    np.testing.assert_allclose(u, h / np.sqrt(2), atol=1e-14)


@pytest.mark.parametrize("m", [2, 3, 5])
def test_identity_tie_break(m):
    lam, u = herm_eig_max(np.eye(m))
    assert lam == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(u, np.eye(m)[0])


def test_tie_break_picks_smallest_index_in_dominant_space():
    lam, u = herm_eig_max(np.diag([1.0, 3.0, 3.0, 2.0]))
    assert lam == pytest.approx(3.0)
    np.testing.assert_allclose(u, [0, 1, 0, 0], atol=1e-12)


def test_non_hermitian_rejected():
    with pytest.raises(ValueError):
        herm_eig_max(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        check_hermitian(np.ones((2, 3)))


def test_indefinite_spectrum_picks_algebraic_max():
    # eigenvalues 1 and -5: the algebraically largest is 1, not the largest magnitude
    lam, u = herm_eig_max(np.diag([-5.0, 1.0, -2.0]))
    assert lam == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.abs(u), [0, 1, 0], atol=1e-9)


@pytest.mark.parametrize("m", [2, 3, 4, 6])
def test_spectral_construction(m):
    gen = np.random.default_rng(m)
    for _ in range(25):
        q, _ = np.linalg.qr(gen.standard_normal((m, m)) + 1j * gen.standard_normal((m, m)))
        c = np.sort(gen.uniform(0, 1, m))[::-1]
        c[0] += 0.2   # keep a spectral gap
        hm = (q * c) @ q.conj().T
        hm = 0.5 * (hm + hm.conj().T)
        lam, u = herm_eig_max(hm)
        assert lam == pytest.approx(c[0], abs=1e-9)
        assert abs(abs(np.vdot(q[:, 0], u)) - 1) < 1e-9
        assert np.linalg.norm(hm @ u - lam * u) <= 1e-9 * max(1, abs(lam))


@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_matches_reference_eigensolver(m, seed):
    gen = np.random.default_rng(seed)
    hm = random_hermitian(gen, m)
    lam, u = herm_eig_max(hm)
    assert lam == pytest.approx(np.linalg.eigvalsh(hm)[-1], abs=1e-9)
    assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(hm @ u - lam * u) <= 1e-9 * max(1, abs(lam))
    k = np.argmax(np.abs(u))
    assert u[k].imag == 0 and u[k].real >= 0


@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_rayleigh_quotient_bound(m, seed):
    gen = np.random.default_rng(seed)
    hm = random_hermitian(gen, m)
    lam, _ = herm_eig_max(hm)
    x = gen.standard_normal((1000, m)) + 1j * gen.standard_normal((1000, m))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    rq = np.einsum("bi,ij,bj->b", x.conj(), hm, x).real
    assert np.all(rq <= lam + 1e-12)


@given(arrays(np.complex128, 4, elements=st.complex_numbers(max_magnitude=10, allow_nan=False,
                                                            allow_infinity=False)))
def test_canonical_phase(v):
    out = canonical_phase(v)
    np.testing.assert_allclose(np.abs(out), np.abs(v), atol=1e-12)
    k = np.argmax(np.abs(v))
    if abs(v[k]) > 0:
        assert out[k].imag == 0 and out[k].real >= 0
