import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qstokes.errors import EvaluationOverflow, ValidationError
from qstokes.laurent import (QContext, SeriesMatrix, WindowedLaurent, block_triangular_inverse,
                             gaussian_weights, power_table, qpowers, unipotent_inverse)

from conftest import rand_series


def test_context_rejects_small_q():
    with pytest.raises(ValidationError):
        QContext(0.5)
    with pytest.raises(ValidationError):
        QContext(1.0 + 0j)
    with pytest.raises(ValidationError):
        QContext(2.0, N=2)


def test_qpowers_match_direct():
    q = 1.7 + 0.4j
    p = qpowers(q, -5, 6)
    np.testing.assert_allclose(p, [q ** n for n in range(-5, 7)], rtol=1e-14)


def test_gaussian_weights():
    q = 2.5
    w = gaussian_weights(q, -4, 5)
    np.testing.assert_allclose(w, [q ** (-n * (n - 1) / 2) for n in range(-4, 6)], rtol=1e-14)


def test_product_is_convolution(ctx):
    f = WindowedLaurent(ctx, -1, [1, 2, 3])
    g = WindowedLaurent(ctx, 2, [1, -1])
    h = f * g
    assert (h.lo, h.hi) == (1, 4)
    np.testing.assert_allclose(h.c, [1, 1, 1, -3])


def test_sigma_and_shift(ctx):
    f = WindowedLaurent(ctx, -2, [1.0, 2.0, 3.0, 4.0])
    s = f.sigma(1)
    np.testing.assert_allclose(s.c, f.c * 3.0 ** np.arange(-2, 2))
    assert f.shift(3).lo == 1


def test_evaluate_against_sum(ctx):
    rng = np.random.default_rng(1)
    f = rand_series(ctx, rng, -6, 9)
    for z in (0.7 + 0.2j, -1.3, 2j):
        direct = sum(f.coefficient(n) * z ** n for n in range(-6, 10))
        assert abs(f.evaluate(z) - direct) <= 1e-12 * max(1, abs(direct))


def test_evaluate_many_matches_evaluate(ctx):
    rng = np.random.default_rng(2)
    F = rand_series(ctx, rng, -3, 7, 2, 3)
    zs = np.array([0.8 + 0.1j, 1.5, -2.2j])
    vals = F.evaluate_many(zs)
    assert vals.shape == (2, 3, 3)
    for k, z in enumerate(zs):
        np.testing.assert_allclose(vals[:, :, k], F.evaluate(z), rtol=1e-13)
    pt = power_table(zs, -2, 3)
    np.testing.assert_allclose(pt, zs[:, None] ** np.arange(-2, 4)[None, :], rtol=1e-14)


def test_evaluate_overflow_raises():
    ctx = QContext(2.0, 400)
    f = WindowedLaurent(ctx, 0, np.ones(400))
    with pytest.raises(EvaluationOverflow):
        f.evaluate(1e3)


def test_window_clipping_marks_inexact():
    ctx = QContext(2.0, 5)
    f = WindowedLaurent(ctx, 0, np.ones(4))
    g = f * f
    assert g.hi <= 5
    assert g.exact_window[1] <= 5


def test_ndarray_matmul_defers(ctx):
    rng = np.random.default_rng(3)
    F = rand_series(ctx, rng, 0, 4, 2, 2)
    M = np.array([[1.0, 2.0], [0.0, 1.0]])
    left = M @ F
    np.testing.assert_allclose(left.c, np.einsum("ik,kjn->ijn", M, F.c))


def test_block_triangular_inverse(ctx):
    rng = np.random.default_rng(4)
    U = rand_series(ctx, rng, 0, 3, 1, 1)
    grid = [[SeriesMatrix.constant(ctx, [[2.0]], degree=-1), U],
            [SeriesMatrix.zeros(ctx, 1, 1), SeriesMatrix.constant(ctx, [[3.0]])]]
    M = SeriesMatrix.assemble(ctx, grid)
    Minv = block_triangular_inverse(M, [1, 1])
    prod = M @ Minv
    assert prod.allclose(SeriesMatrix.identity(ctx, 2), rtol=1e-13)


def test_unipotent_inverse(ctx):
    rng = np.random.default_rng(5)
    c = np.zeros((3, 3, 3), dtype=complex)
    for i in range(3):
        c[i, i, 0] = 1
    c[0, 1] = rng.standard_normal(3)
    c[1, 2] = rng.standard_normal(3)
    c[0, 2] = rng.standard_normal(3)
    F = SeriesMatrix(ctx, 0, c)
    assert (F @ unipotent_inverse(F)).allclose(SeriesMatrix.identity(ctx, 3), rtol=1e-13)


def test_extended_arithmetic_agrees(ctx):
    rng = np.random.default_rng(6)
    f = rand_series(ctx, rng, 0, 5)
    g = rand_series(ctx, rng, -2, 3)
    ext = (f.to_extended() * g.to_extended()).to_complex()
    assert ext.allclose(f * g, rtol=1e-14)
    assert isinstance(f.to_extended().c[0], mpmath.mpc)


coeffs = st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                  min_size=1, max_size=8)


@settings(max_examples=40, deadline=None)
@given(coeffs, coeffs, coeffs, st.integers(-5, 5), st.integers(-5, 5))
def test_product_associative_and_distributive(a, b, c, la, lb):
    ctx = QContext(2.0, 40)
    f, g, h = WindowedLaurent(ctx, la, a), WindowedLaurent(ctx, lb, b), WindowedLaurent(ctx, 0, c)
    assert ((f * g) * h).allclose(f * (g * h), rtol=1e-12, atol=1e-12)
    assert (f * (g + h)).allclose(f * g + f * h, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(coeffs, st.integers(-4, 4), st.integers(-3, 3))
def test_sigma_is_multiplicative(a, lo, m):
    ctx = QContext(1.5 + 0.5j, 40)
    f = WindowedLaurent(ctx, lo, a)
    g = WindowedLaurent(ctx, 0, [1.0, 0.5])
    assert (f * g).sigma(m).allclose(f.sigma(m) * g.sigma(m), rtol=1e-11, atol=1e-12)


# worked examples -----------------------------------------------------------

def test_examples_products_and_sums(ctx):
    one_plus = WindowedLaurent(ctx, 0, [1, 1])
    one_minus = WindowedLaurent(ctx, 0, [1, -1])
    assert (one_plus * one_minus).allclose(WindowedLaurent(ctx, 0, [1, 0, -1]), rtol=0)
    f = WindowedLaurent(ctx, -2, [1, 2, 3])
    assert (f + WindowedLaurent.zero(ctx)).allclose(f, rtol=0)


def test_example_clipped_product():
    ctx = QContext(2.0, 4)
    f = WindowedLaurent(ctx, -3, np.ones(7))
    g = f * WindowedLaurent.monomial(ctx, 2)
    assert (g.lo, g.hi) == (-1, 4)
    assert g.exact_window == (-1, 4)
    assert g.lossy


def test_example_sigma(ctx):
    z2 = WindowedLaurent.monomial(ctx, 2)
    assert z2.sigma(1).allclose(WindowedLaurent.monomial(ctx, 2, 9.0), rtol=0)
    c = WindowedLaurent.constant(ctx, 2.5)
    assert c.sigma(1).allclose(c, rtol=0)
    rng = np.random.default_rng(9)
    f = rand_series(ctx, rng, -5, 5)
    assert f.sigma(1).sigma(-1).allclose(f, rtol=1e-15)


def test_example_evaluations(ctx):
    assert WindowedLaurent(ctx, 0, [1, 1]).evaluate(2) == 3
    assert WindowedLaurent.monomial(ctx, -1).evaluate(2) == 0.5


def test_example_theta_window_functional_equation():
    from qstokes.theta import theta_coeffs
    ctx = QContext(3.0, 30)
    th = theta_coeffs(ctx)
    z = 0.5
    # theta(q z) = q z theta(q z / q) ... i.e. theta(z) = theta(q z) / z
    assert abs(th.evaluate(z) - th.evaluate(3 * z) / z) <= 1e-10 * abs(th.evaluate(z))


def test_example_inverses(ctx):
    zero, one = SeriesMatrix.zeros(ctx, 1, 1), SeriesMatrix.identity(ctx, 1)
    zz = SeriesMatrix.constant(ctx, [[1.0]], degree=1)
    M = SeriesMatrix.assemble(ctx, [[one, zero], [zero, zz]])
    inv = block_triangular_inverse(M, [1, 1])
    assert inv.entry(1, 1).allclose(WindowedLaurent.monomial(ctx, -1), rtol=0)
    u = WindowedLaurent(ctx, 0, [2.0, 1.0]).as_matrix()
    M = SeriesMatrix.assemble(ctx, [[one, u], [zero, zz]])
    inv = block_triangular_inverse(M, [1, 1])
    assert inv.entry(0, 1).allclose(-WindowedLaurent(ctx, -1, [2.0, 1.0]), rtol=1e-15)
