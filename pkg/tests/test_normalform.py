import math

import mpmath
import numpy as np
import pytest

from qstokes.errors import NonConvergence
from qstokes.gen import gen_instance
from qstokes.laurent import QContext, SeriesMatrix, WindowedLaurent
from qstokes.normalform import (NotAGerm, birkhoff_guenther, convergence_verdict, edge_ratio,
                                formal_fixpoint, formal_link, formal_residual, normal_window,
                                nu_invariant, ocstar_normalize, qborel, red_pair, red_residual,
                                tail_sum_pair)
from qstokes.system import BlockMatrix, BlockShape

from conftest import rand_series, scalar_system


def scalar(S):
    return S.entry(0, 0) if isinstance(S, SeriesMatrix) else S


# Red -----------------------------------------------------------------------

def test_red_constant_is_its_own_invariant(ctx):
    F, V = red_pair(0, 1.0, -1, 1.0, WindowedLaurent.constant(ctx, 1.0))
    assert F.max_abs() == 0
    assert (V.lo, V.hi) == (0, 0) and V.coefficient(0)[0, 0] == 1


def test_red_coboundary(ctx):
    # z sigma F - F = V - U with U = 1 - z is solved by F = 1, V = 0
    U = WindowedLaurent(ctx, 0, [1.0, -1.0])
    F, V = red_pair(0, 1.0, -1, 1.0, U)
    assert scalar(F).allclose(WindowedLaurent.constant(ctx, 1.0), rtol=1e-15, atol=1e-15)
    assert V.max_abs() < 1e-15


def test_red_zero(ctx):
    F, V = red_pair(2, 1.0, 0, 3.0, WindowedLaurent.zero(ctx))
    assert F.max_abs() == 0 and V.max_abs() == 0


@pytest.mark.parametrize("mu,mu2", [(1, 0), (0, -1), (3, 1), (2, -1)])
def test_red_solves_equation_matrix_blocks(mu, mu2):
    rng = np.random.default_rng(mu * 10 + mu2 + 20)
    ctx = QContext(2.0 + 0.5j, 40)
    A = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
    A2 = np.array([[1.5]])
    U = rand_series(ctx, rng, 0, 8, 2, 1, decay=0.5)
    F, V = red_pair(mu, A, mu2, A2, U)
    assert red_residual(mu, A, mu2, A2, U, F, V) < 1e-13
    assert (V.lo, V.hi) == (-mu, -mu2 - 1)


def test_tail_sums_match_recurrence():
    rng = np.random.default_rng(4)
    ctx = QContext(2.5, 40)
    for mu, mu2 in [(1, 0), (0, -2), (3, 0)]:
        u = rand_series(ctx, rng, -2, 10, decay=0.6)
        F1, V1 = red_pair(mu, 1.3, mu2, 0.7 + 0.2j, u)
        F2, V2 = tail_sum_pair(mu, 1.3, mu2, 0.7 + 0.2j, u)
        assert scalar(V1).allclose(V2, rtol=1e-11)
        assert scalar(F1).allclose(F2, rtol=1e-11)


def test_tail_sum_examples(ctx):
    f, v = tail_sum_pair(0, 1.0, -1, 1.0, WindowedLaurent(ctx, 0, [1.0, -1.0]))
    assert f.allclose(WindowedLaurent.constant(ctx, 1.0), rtol=1e-15, atol=1e-15)
    assert v.max_abs() < 1e-15
    f, v = tail_sum_pair(0, 1.0, -1, 1.0, WindowedLaurent.constant(ctx, 1.0))
    assert f.max_abs() == 0 and v.coefficient(0) == 1


def test_red_growth_contract():
    ctx = QContext(3.0, 40)
    a = 0.5
    u = WindowedLaurent(ctx, 0, a ** np.arange(30))
    F, _ = red_pair(0, 1.0, -1, 1.0, u)
    f = np.abs(scalar(F).c)
    ratios = f[6:20] / f[5:19]
    assert np.all(ratios <= 1.5 * a / 3.0)


# nu and Borel ---------------------------------------------------------------

def test_nu_examples(ctx):
    q = ctx.q
    assert nu_invariant(WindowedLaurent.constant(ctx, 1.0)) == 1
    u = WindowedLaurent(ctx, 1, [-1.0, q])
    assert abs(nu_invariant(u)) < 1e-15
    assert abs(nu_invariant(WindowedLaurent.monomial(ctx, -1)) - 1 / q) < 1e-15


def test_nu_matches_normal_form(ctx):
    rng = np.random.default_rng(7)
    u = rand_series(ctx, rng, -3, 12, decay=0.5)
    A = BlockMatrix(ctx, BlockShape.scalar((0, -1)), {(0, 1): u})
    V = birkhoff_guenther(A).V.U(0, 1)
    assert abs(V.coefficient(0)[0, 0] - nu_invariant(u)) < 1e-12 * abs(nu_invariant(u))


def test_borel_of_tschakaloff():
    ctx = QContext(3.0, 60)
    c = np.array([-mpmath.mpf(3) ** (n * (n - 1) // 2) for n in range(61)], dtype=object)
    f = WindowedLaurent(ctx, 0, np.array([mpmath.mpc(x) for x in c], dtype=object))
    b = qborel(f)
    assert all(abs(b.coefficient(n) + 1) < 1e-14 for n in range(61))


def test_borel_exchanges_z_sigma_and_xi():
    rng = np.random.default_rng(11)
    ctx = QContext(2.0 + 1.0j, 30)
    f = rand_series(ctx, rng, -10, 10)
    lhs = qborel(f.sigma(1).shift(1))
    rhs = qborel(f).shift(1)
    for n in range(-9, 12):
        assert abs(lhs.coefficient(n) - rhs.coefficient(n)) <= 1e-13 * abs(rhs.coefficient(n))


# formal gauges --------------------------------------------------------------

def test_formal_fixpoint_trivial(ctx):
    A = scalar_system(ctx, (1, 0))
    assert formal_fixpoint(A, 30).max_offdiag() == 0


def test_tschakaloff_fixpoint():
    ctx = QContext(3.0, 64)
    A = scalar_system(ctx, (0, -1), {(0, 1): [1.0]})
    f = formal_fixpoint(A, 60).F(0, 1).entry(0, 0)
    for n in range(61):
        ref = -mpmath.mpf(3) ** (n * (n - 1) // 2)
        assert abs(f.coefficient(n) - ref) <= 1e-12 * abs(ref)
    assert not convergence_verdict(f)


def test_formal_fixpoint_residual_random():
    A, _, _ = gen_instance(5, (2, 1, 0), (1, 2, 1), N=40)
    F = formal_fixpoint(A, 30)
    assert formal_residual(F, BlockMatrix(A.ctx, A.shape, {}), A, order=30) < 1e-13


def test_formal_link_product_identity_exact_data():
    # dyadic data at q = 2: every quantity is exact in high precision
    ctx = QContext(2.0, 30)
    sh = BlockShape.scalar((1, 0))
    A = BlockMatrix(ctx, sh, {(0, 1): WindowedLaurent(ctx, 0, [1.0, 0.5, 0.25])})
    B = BlockMatrix(ctx, sh, {(0, 1): WindowedLaurent(ctx, 0, [0.5, -1.0])})
    with mpmath.workprec(3000):
        L = formal_link(A, B, 20, tol=1e-40).F(0, 1).entry(0, 0)
        FA = formal_fixpoint(A, 20, tol=1e-40).F(0, 1).entry(0, 0)
        FB = formal_fixpoint(B, 20, tol=1e-40).F(0, 1).entry(0, 0)
        for n in range(21):
            ref = FB.coefficient(n) - FA.coefficient(n)
            assert abs(L.coefficient(n) - ref) <= 1e-20 * max(abs(ref), 1)


def test_formal_link_backward_error():
    A, B, _ = gen_instance(8, (1, 0), planted=True, N=40)
    F = formal_link(A, B, 30)
    assert formal_residual(F, A, B, order=30) < 1e-12


# Birkhoff-Guenther ---------------------------------------------------------

def test_bg_graded_input(ctx):
    A = scalar_system(ctx, (2, 1, 0))
    r = birkhoff_guenther(A)
    assert r.F.max_offdiag() == 0 and r.V.is_graded()


def test_bg_tschakaloff(ctx):
    A = scalar_system(ctx, (0, -1), {(0, 1): [1.0]})
    r = birkhoff_guenther(A)
    V = r.V.U(0, 1)
    assert (V.lo, V.hi) == normal_window(A.shape, 0, 1)
    assert V.coefficient(0)[0, 0] == 1


@pytest.mark.parametrize("seed", range(4))
def test_bg_residual_idempotence_and_order(seed):
    A, _, _ = gen_instance(seed, (3, 1, 0), (2, 1, 2), N=40)
    r = birkhoff_guenther(A)
    assert r.residual < 1e-12
    for i, j in A.shape.pairs():
        lo, hi = normal_window(A.shape, i, j)
        V = r.V.U(i, j)
        assert V.lo >= lo and V.hi <= hi
    again = birkhoff_guenther(r.V)
    assert again.F.max_offdiag() < 1e-9
    rev = birkhoff_guenther(A, order=lambda level: level[::-1])
    for i, j in A.shape.pairs():
        assert rev.V.U(i, j).allclose(r.V.U(i, j), rtol=1e-12)


def test_bg_equivalent_systems_share_normal_form():
    A, B, _ = gen_instance(12, (2, 0), planted=True, N=40)
    va = birkhoff_guenther(A).V.U(0, 1)
    vb = birkhoff_guenther(B).V.U(0, 1)
    assert va.allclose(vb, rtol=1e-10)


# two-sided inputs -----------------------------------------------------------

def test_ocstar_engines_agree():
    ctx = QContext(2.0, 40)
    rng = np.random.default_rng(3)
    n = np.arange(-20, 21)
    u = WindowedLaurent(ctx, -20, (rng.standard_normal(41) + 0j) * np.exp(-0.4 * n ** 2.0),
                        tails=(True, True))
    A = BlockMatrix(ctx, BlockShape.scalar((1, -1), [1.0, 1.7]), {(0, 1): u})
    a = ocstar_normalize(A, engine="tailsum")
    b = ocstar_normalize(A, engine="recurrence")
    assert a.V.U(0, 1).allclose(b.V.U(0, 1), rtol=1e-11)
    assert a.residual < 1e-12


def test_ocstar_rejects_non_germ():
    ctx = QContext(2.0, 20)
    u = WindowedLaurent(ctx, -20, np.ones(41), tails=(True, True))
    A = BlockMatrix(ctx, BlockShape.scalar((1, 0)), {(0, 1): u})
    with pytest.raises(NotAGerm):
        ocstar_normalize(A)


def test_convergence_verdicts():
    ctx = QContext(3.0, 40)
    geo = WindowedLaurent(ctx, 0, 0.5 ** np.arange(40))
    assert convergence_verdict(geo)
    assert abs(edge_ratio(geo) - 0.5) < 1e-10
    lq = math.log(3.0)
    border = WindowedLaurent(ctx, 0, np.exp(0.5 * lq * np.arange(40) ** 2 / 2 - 30))
    with pytest.raises(NonConvergence):
        convergence_verdict(border)
