import numpy as np
import pytest

from qstokes.errors import ValidationError
from qstokes.gen import gen_instance, pick_divisor
from qstokes.laurent import QContext, SeriesMatrix, WindowedLaurent
from qstokes.stokes import (build_cocycle, classify_pair, flatness_level, level_pattern,
                            nilpotent_exp, unipotent_log)
from qstokes.summation import sample_grid
from qstokes.system import BlockMatrix, gauge_action
from qstokes.theta import SummationDivisor, theta_log

from conftest import scalar_system


def three_divisors(A, seed=0):
    rng = np.random.default_rng(seed)
    return [pick_divisor(A, rng) for _ in range(3)]


def test_graded_cocycle_is_identity():
    ctx = QContext(2.0, 40)
    A = scalar_system(ctx, (2, 1, 0), values=[1.0, 1.3, 1.7])
    coc = build_cocycle(A, three_divisors(A))
    for z in (0.9 + 0.2j, -1.3j):
        np.testing.assert_allclose(coc.component(0, 2, z), np.eye(3), atol=1e-14)


def test_cocycle_identity_and_fixing():
    A, _, _ = gen_instance(2, (2, 1, 0), (1, 2, 1), N=40)
    coc = build_cocycle(A, three_divisors(A, 2))
    assert coc.certificate["identity_residual"] <= 1e-8
    assert coc.certificate["fixing_residual"] <= 1e-7
    z = sample_grid(A.ctx.q, 1, 1, avoid=coc.avoid())[0]
    C = coc.component(0, 1, z)
    # unipotent block upper triangular
    np.testing.assert_allclose(np.diag(C), 1, atol=1e-12)
    assert np.allclose(np.tril(C, -1), 0, atol=1e-12)
    assert coc.identity_residual(0, 1, 2, z) < 1e-10


def test_flatness_synthetic():
    q = 3.0
    z0 = 0.8 + 0.3j
    for d in (1, 2, 3):
        y = [-d * theta_log(q, z0 * q ** -m)[0] for m in range(1, 26)]
        assert abs(flatness_level(y, q, log=True).level - d) <= 0.1 * d
    const = flatness_level(np.full(25, 2.0 + 1j), q)
    assert abs(const.level) < 1e-10
    with pytest.raises(ValidationError):
        flatness_level(np.ones(5), q)


def test_cocycle_flatness_levels():
    A, _, _ = gen_instance(4, (2, 1, 0), (1, 1, 1), N=40)
    coc = build_cocycle(A, three_divisors(A, 4))
    z0 = sample_grid(A.ctx.q, 1, 1, seed=1, avoid=coc.avoid())[0]
    for i, j in A.shape.pairs():
        y = coc.ray_log_values(0, 1, i, j, z0, 25)
        fit = flatness_level(y, A.ctx.q, log=True)
        gap = A.shape.gap(i, j)
        assert abs(fit.level - gap) <= 0.1 * gap


def test_level_patterns():
    p1 = level_pattern((2, 1, 0), 1).one_based()
    assert p1 == ([(1, 2), (1, 3), (2, 3)], [(1, 2), (2, 3)])
    p2 = level_pattern((2, 1, 0), 2).one_based()
    assert p2 == ([(1, 3)], [(1, 3)])
    assert level_pattern((2, 1, 0), 3).one_based() == ([], [])


def test_exp_log():
    f = np.array([[0, 2.0], [0, 0]])
    np.testing.assert_allclose(nilpotent_exp(f), np.eye(2) + f)
    g = np.zeros((3, 3))
    g[0, 1], g[1, 2] = 2.0, 3.0
    E = nilpotent_exp(g)
    assert E[0, 2] == 3.0
    np.testing.assert_allclose(unipotent_log(E), g, atol=1e-15)
    ctx = QContext(2.0, 20)
    c = np.zeros((3, 3, 2), dtype=complex)
    c[0, 1] = [1, 2]
    c[1, 2] = [0.5, -1]
    S = SeriesMatrix(ctx, 0, c)
    assert unipotent_log(nilpotent_exp(S)).allclose(S, rtol=1e-14)
    with pytest.raises(ValidationError):
        nilpotent_exp(np.eye(2))


def test_classify_tschakaloff_vs_graded():
    ctx = QContext(3.0, 40)
    A1 = scalar_system(ctx, (0, -1), {(0, 1): [1.0]})
    A0 = scalar_system(ctx, (0, -1))
    D = SummationDivisor((0, -1), 3.0, (1.5j,))
    v = classify_pair(A1, A0, D)
    assert not v.equivalent
    assert v.witness[:2] == (0, 1)
    assert v.nu_check["max_abs"] == pytest.approx(1.0)


def test_classify_planted_coboundary():
    ctx = QContext(3.0, 40)
    Au = scalar_system(ctx, (0, -1), {(0, 1): [0.3, 1.0, -0.5]})
    g = WindowedLaurent(ctx, 0, [1.0, 0.25, -0.5])
    from qstokes.system import GaugeElement
    G = GaugeElement(ctx, Au.shape, {(0, 1): g})
    Av = gauge_action(G, Au)
    D = SummationDivisor((0, -1), 3.0, (1.2 + 0.5j,))
    v = classify_pair(Au, Av, D)
    assert v.equivalent
    for z in sample_grid(ctx.q, 3, 2, avoid=D.lifted_support()):
        np.testing.assert_allclose(v.gauge.evaluate(z), G.evaluate(z), atol=1e-10)


def test_classify_self_pair():
    A, _, _ = gen_instance(9, (2, 1, 0), (1, 2, 1), N=40)
    v = classify_pair(A, A, pick_divisor(A))
    assert v.equivalent
    np.testing.assert_allclose(v.gauge.evaluate(1.3 + 0.2j), np.eye(A.shape.n), atol=1e-14)


@pytest.mark.parametrize("seed", range(6))
def test_classify_random_two_slope(seed):
    planted = seed % 2 == 0
    A, B, _ = gen_instance(seed, (1, 0), planted=True, N=40)
    if not planted:
        rng = np.random.default_rng(100 + seed)
        u = B.U(0, 1) + SeriesMatrix(A.ctx, 0, rng.standard_normal((1, 1, 3)) + 0j)
        B = BlockMatrix(A.ctx, A.shape, {(0, 1): u})
    v = classify_pair(A, B, pick_divisor(A))
    assert v.equivalent == planted
