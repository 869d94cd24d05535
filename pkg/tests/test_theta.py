import cmath
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from qstokes.errors import BorderlineDivisor, ValidationError
from qstokes.laurent import QContext
from qstokes.theta import (EqDivisor, EqPoint, SummationDivisor, ThetaGauge, ev_Eq, eq_distance,
                           is_allowed, normalize, theta_coeffs, theta_log, theta_log_many,
                           theta_value)


def direct_theta(q, z, K=60):
    return sum(q ** (-n * (n + 1) / 2) * z ** n for n in range(-K, K + 1))


@pytest.mark.parametrize("q", [3.0, 2.0 + 1.0j, -2.5])
def test_value_matches_direct_sum(q):
    for z in (0.9 + 0.3j, -1.7, 2.2j, 0.2):
        ref = direct_theta(q, z)
        assert abs(theta_value(q, z) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_zeros_on_minus_c_qZ():
    q = 2.5 + 0.5j
    c = 1.3 - 0.4j
    for m in (-2, 0, 1, 3):
        z = -c * q ** m
        scale = math.exp(theta_log(q, z * 1.01, c)[0])
        assert abs(theta_value(q, z, c)) <= 1e-10 * scale


def test_functional_equation_values():
    q = 1.8 - 0.6j
    for z in (0.5 + 1j, -3.1 + 0.2j, 40.0):
        lhs = theta_value(q, q * z)
        rhs = z * theta_value(q, z)
        assert abs(lhs - rhs) <= 1e-12 * abs(rhs)


def test_log_form_far_from_annulus():
    q = 3.0
    la, ph = theta_log(q, 3.0 ** 40 * 1.3)
    # theta(q^m w) = q^(m(m-1)/2) w^m theta(w)
    m, w = 40, 1.3
    expect = (m * (m - 1) / 2) * math.log(3.0) + m * math.log(w) + math.log(abs(theta_value(q, w)))
    assert abs(la - expect) <= 1e-10 * abs(expect)
    assert abs(abs(ph) - 1) < 1e-14


def test_log_many_matches_scalar():
    q = 2.0 + 0.7j
    zs = np.array([0.3 + 2j, 1e5, -7e-4j, 1.0, -0.99])
    la, ph = theta_log_many(q, zs, 1.5 - 0.2j)
    for z, a, p in zip(zs, la, ph):
        a2, p2 = theta_log(q, z, 1.5 - 0.2j)
        assert abs(a - a2) <= 1e-12 * max(1, abs(a2))
        assert abs(p - p2) <= 1e-12


def test_coefficient_functional_equation():
    ctx = QContext(3.0, 40)
    th = theta_coeffs(ctx)
    s, z = th.sigma(1), th.shift(1)
    for n in range(-35, 36):
        a, b = s.coefficient(n), z.coefficient(n)
        assert abs(a - b) <= 1e-13 * abs(b)


def test_normalize_and_distance():
    q = 2.0 + 1.0j
    a = 1.3 + 0.2j
    for m in (-3, 0, 4):
        r = normalize(a * q ** m, q)
        assert 1 <= abs(r) < abs(q)
        assert eq_distance(a * q ** m, a, q) < 1e-12
    assert eq_distance(a, -a, q) > 0.1


def test_eq_divisor_group_law():
    q = 3.0
    D = EqDivisor.from_points(q, [1.5, 2.0 * 3.0, 1.5 * 9])
    assert D.degree == 3
    assert len(D.terms) == 2
    e = ev_Eq(D)
    assert e.same_as(EqPoint.of(1.5 * 1.5 * 2.0, q))


def test_summation_divisor_is_adapted():
    q = 2.0
    D = SummationDivisor((3, 1, 0), q, (1.1, 1.3j, -1.5))
    assert D.D(0, 2).degree == 3
    assert D.D(0, 1).degree == 2 and D.D(1, 2).degree == 1
    assert (D.D(0, 1) + D.D(1, 2)).degree == D.D(0, 2).degree
    for p, _ in (D.D(0, 1) + D.D(1, 2)).terms:
        assert D.multiplicity_at(0, 2, p.representative) >= 1
    with pytest.raises(ValidationError):
        SummationDivisor((2, 0), q, (1.1,))


def test_allowedness_witness():
    q = 3.0
    # slopes (1, 0), constants 1 and 2: prohibited class is -1/2
    bad = SummationDivisor((1, 0), q, (-0.5 * 3.0,))
    res = is_allowed(bad, [[1.0], [2.0]])
    assert not res and res.witness[:2] == (0, 1)
    assert is_allowed(SummationDivisor((1, 0), q, (1.5j,)), [[1.0], [2.0]])
    with pytest.raises(BorderlineDivisor):
        is_allowed(SummationDivisor((1, 0), q, (-1.5 * (1 + 1e-6),)), [[1.0], [2.0]])


def test_theta_gauge_multiplier():
    q = 2.5 + 0.3j
    D = SummationDivisor((2, 1, 0), q, (1.2 + 0.3j, -1.4j))
    T = ThetaGauge(D)
    z = 0.7 + 1.1j
    for i in range(3):
        # sigma t_i = alpha_i z^mu_i t_i
        lhs = T.t(i, q * z)
        rhs = T.alpha(i) * z ** D.slopes[i] * T.t(i, z)
        assert abs(lhs - rhs) <= 1e-11 * abs(rhs)
    r = T.ratio(2, 0, z)
    expect = 1 / (theta_value(q, z, -D.points[0]) * theta_value(q, z, -D.points[1]))
    assert abs(r - expect) <= 1e-12 * abs(expect)
    np.testing.assert_allclose(T.ratio_many(2, 0, [z, 2 * z]),
                               [T.ratio(2, 0, z), T.ratio(2, 0, 2 * z)], rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2 * math.pi))
def test_quasi_periodicity_property(logr, phi):
    q = 2.2 + 0.4j
    z = cmath.rect(math.exp(logr), phi)
    assume(eq_distance(z, -1.0, q) > 1e-3)
    la1, ph1 = theta_log(q, q * z)
    la0, ph0 = theta_log(q, z)
    assert abs((la1 - la0) - math.log(abs(z))) < 1e-9
    assert abs(ph1 - ph0 * z / abs(z)) < 1e-9


def test_example_theta_coefficients():
    ctx = QContext(3.0, 20)
    th = theta_coeffs(ctx)
    for n, v in [(0, 1.0), (1, 1 / 3), (-1, 1.0), (-2, 1 / 3)]:
        assert abs(th.coefficient(n) - v) < 1e-15


def test_example_zero_of_shifted_theta():
    q, c = 3.0, 1.2
    near = max(abs(theta_value(q, -c * (1 + 0.05 * np.exp(1j * t)), c)) for t in range(6))
    assert abs(theta_value(q, -c, c)) <= 1e-9 * near


def test_example_group_law_and_concentrated_point():
    q = 3.0
    a, b = 1.4 + 0.2j, 2.1j
    assert ev_Eq(EqDivisor.from_points(q, [a, b])).same_as(EqPoint.of(normalize(a * b, q), q))
    e = ev_Eq(EqDivisor.from_points(q, [1.5], [2]))
    assert abs(e.representative - 2.25) < 1e-14


def test_example_allowed_and_prohibited():
    q = 3.0
    sp = [[2.0], [1.0]]
    assert is_allowed(SummationDivisor((1, 0), q, (1.0,)), sp)
    res = is_allowed(SummationDivisor((1, 0), q, (-2.0,)), sp)
    assert not res
    assert res.witness == (0, 1, 2.0, 1.0)
    assert is_allowed(SummationDivisor((0,), q, ()), [[5.0]])


def test_example_ratio_zero_at_divisor():
    q = 3.0
    a = 1.7 + 0.4j
    T = ThetaGauge(SummationDivisor((1, 0), q, (a,)))
    for m in (0, 1, -1):
        p = a * q ** m
        # t_1 / t_0 = theta_{-a}: zero at a q^m
        near = abs(T.t(0, p * 1.01) / T.t(1, p * 1.01))
        assert abs(T.t(0, p) / T.t(1, p)) <= 1e-9 * near
