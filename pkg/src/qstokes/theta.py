"""Jacobi theta functions, points and divisors on the elliptic curve
``E_q = C*/q^Z``, summation divisors and the theta multipliers ``t_i``.

Conventions::

    theta(z)    = sum_n q**(-n(n+1)/2) z**n,   theta(q z) = z theta(z)
    theta_c(z)  = theta(z / c)                 (simple zeros on -c q^Z)

A point of ``E_q`` is stored through its representative in the
fundamental annulus ``1 <= |a| < |q|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BorderlineDivisor, EvaluationOverflow, PoleProximity, ValidationError
from .laurent import QContext, WindowedLaurent

POINT_RTOL = 1e-8
DEFAULT_MARGIN = 1e-4
_ANNULUS_TERMS = 30


def check_theta_window(ctx: QContext):
    if abs(ctx.q) < 1.5 and ctx.N < 80:
        raise ValidationError("theta windows need N >= 80 when |q| < 1.5")


def theta_coeffs(ctx: QContext, c: complex = 1.0, window: tuple[int, int] | None = None
                 ) -> WindowedLaurent:
    """Laurent coefficients of ``theta_c``: ``q**(-n(n+1)/2) * c**(-n)``.

    Built by the recurrence ``t_n = t_{n-1} / (q**n c)`` so that the
    coefficient identities hold to a few ulps.
    """
    check_theta_window(ctx)
    c = complex(c)
    if c == 0:
        raise ValidationError("theta shift must be nonzero")
    lo, hi = window if window is not None else (-ctx.N, ctx.N)
    q = ctx.q
    out = np.zeros(hi - lo + 1, dtype=complex)
    t = 1.0 + 0j
    qn = 1.0 + 0j
    for n in range(0, hi + 1):
        if n > 0:
            qn = qn * q
            t = t / (qn * c)
        if n >= lo:
            out[n - lo] = t
    t = 1.0 + 0j
    qn = 1.0 + 0j  # q**(n+1) for the current n
    for n in range(-1, lo - 1, -1):
        # t_n = t_{n+1} * q**(n+1) * c
        t = t * qn * c
        qn = qn / q
        if n <= hi:
            out[n - lo] = t
    return WindowedLaurent(ctx, lo, out).mark_tails_by_decay()


def _theta_annulus(q: complex, w: np.ndarray) -> np.ndarray:
    """theta(w) by direct summation; accurate for moderate ``|w|``."""
    K = _ANNULUS_TERMS
    n = np.arange(-K, K + 1)
    coeff = np.empty(2 * K + 1, dtype=complex)
    t, qn = 1.0 + 0j, 1.0 + 0j
    coeff[K] = 1.0
    for k in range(1, K + 1):
        qn *= q
        t /= qn
        coeff[K + k] = t
    t, qn = 1.0 + 0j, 1.0 + 0j
    for k in range(1, K + 1):
        t *= qn
        qn /= q
        coeff[K - k] = t
    w = np.asarray(w, dtype=complex)
    return (coeff[None, :] * w.reshape(-1, 1) ** n[None, :]).sum(axis=1).reshape(w.shape)


def _reduce(q: complex, w):
    """Write ``w = q**m * w0`` with ``1 <= |w0| < |q|``."""
    lq = math.log(abs(q))
    m = math.floor(math.log(abs(w)) / lq)
    w0 = w / q ** m
    if abs(w0) >= abs(q):
        w0 /= q
        m += 1
    elif abs(w0) < 1:
        w0 *= q
        m -= 1
    return m, w0


def theta_log(q: complex, z: complex, c: complex = 1.0):
    """``(log|theta_c(z)|, theta_c(z)/|theta_c(z)|)`` without overflow.

    Uses ``theta(q**m w) = q**(m(m-1)/2) w**m theta(w)`` to bring ``z/c``
    to the fundamental annulus.
    """
    w = complex(z) / complex(c)
    if w == 0:
        raise ValidationError("theta evaluated at 0")
    m, w0 = _reduce(q, w)
    base = complex(_theta_annulus(q, np.array([w0]))[0])
    if base == 0:
        return -math.inf, 0j
    logabs = (m * (m - 1) / 2) * math.log(abs(q)) + m * math.log(abs(w0)) + math.log(abs(base))
    # phase of q**(m(m-1)/2) * w0**m * base
    ang = (m * (m - 1) / 2) * np.angle(q) + m * np.angle(w0) + np.angle(base)
    phase = complex(math.cos(ang), math.sin(ang))
    return logabs, phase


def theta_log_many(q: complex, zs, c: complex = 1.0):
    """Vectorized :func:`theta_log` over an array of points."""
    w = np.asarray(zs, dtype=complex).ravel() / complex(c)
    if np.any(w == 0):
        raise ValidationError("theta evaluated at 0")
    lq = math.log(abs(q))
    m = np.floor(np.log(np.abs(w)) / lq).astype(int)
    w0 = w / np.power(complex(q), m)
    hi = np.abs(w0) >= abs(q)
    w0[hi] /= q
    m[hi] += 1
    low = np.abs(w0) < 1
    w0[low] *= q
    m[low] -= 1
    base = _theta_annulus(q, w0)
    with np.errstate(divide="ignore"):
        logabs = (m * (m - 1) / 2) * lq + m * np.log(np.abs(w0)) + np.log(np.abs(base))
    ang = (m * (m - 1) / 2) * np.angle(q) + m * np.angle(w0) + np.angle(base)
    return logabs, np.exp(1j * ang)


def theta_value(q: complex, z: complex, c: complex = 1.0) -> complex:
    la, ph = theta_log(q, z, c)
    if la > 700:
        raise EvaluationOverflow(f"theta overflow at z={z}")
    return ph * math.exp(la) if la > -math.inf else 0j


# ---------------------------------------------------------------------------
# Points and divisors on E_q
# ---------------------------------------------------------------------------

def normalize(a: complex, q: complex) -> complex:
    """Representative of ``a mod q^Z`` in ``1 <= |.| < |q|``."""
    a = complex(a)
    if a == 0:
        raise ValidationError("0 is not a point of C*")
    return _reduce(q, a)[1]


def eq_distance(x: complex, y: complex, q: complex) -> float:
    """Relative distance between the classes of ``x`` and ``y`` on ``E_q``."""
    x0, y0 = normalize(x, q), normalize(y, q)
    return min(abs(x0 - y0 * q ** k) / abs(x0) for k in (-1, 0, 1))


@dataclass(frozen=True)
class EqPoint:
    """A point of ``E_q``, held through its fundamental-annulus representative."""

    representative: complex
    q: complex

    @classmethod
    def of(cls, a: complex, q: complex) -> "EqPoint":
        return cls(normalize(a, q), complex(q))

    def same_as(self, other: "EqPoint", rtol: float = POINT_RTOL) -> bool:
        return eq_distance(self.representative, other.representative, self.q) <= rtol

    def __mul__(self, other: "EqPoint") -> "EqPoint":
        return EqPoint.of(self.representative * other.representative, self.q)

    def lifts(self, mmin: int, mmax: int):
        return [self.representative * self.q ** m for m in range(mmin, mmax + 1)]


@dataclass(frozen=True)
class EqDivisor:
    """An effective divisor ``sum n_i [alpha_i]`` on ``E_q``."""

    q: complex
    terms: tuple = field(default_factory=tuple)  # ((EqPoint, mult), ...)

    def __post_init__(self):
        merged: list[list] = []
        for pt, mult in self.terms:
            if not isinstance(pt, EqPoint):
                pt = EqPoint.of(pt, self.q)
            if int(mult) != mult or mult < 1:
                raise ValidationError("divisor multiplicities must be positive integers")
            for entry in merged:
                if entry[0].same_as(pt):
                    entry[1] += int(mult)
                    break
            else:
                merged.append([pt, int(mult)])
        object.__setattr__(self, "terms", tuple((p, m) for p, m in merged))

    @classmethod
    def from_points(cls, q, points, mults=None) -> "EqDivisor":
        mults = [1] * len(points) if mults is None else mults
        return cls(complex(q), tuple((EqPoint.of(a, q), m) for a, m in zip(points, mults)))

    @property
    def degree(self) -> int:
        return sum(m for _, m in self.terms)

    @property
    def support(self):
        return [p for p, _ in self.terms]

    def __add__(self, other: "EqDivisor") -> "EqDivisor":
        return EqDivisor(self.q, self.terms + other.terms)

    def expanded(self):
        """Representatives repeated by multiplicity."""
        return [p.representative for p, m in self.terms for _ in range(m)]


def ev_Eq(D: EqDivisor) -> EqPoint:
    """Evaluation of a divisor with the group law of ``E_q`` (``C*/q^Z``)."""
    prod = 1.0 + 0j
    for p, m in D.terms:
        prod = normalize(prod * p.representative ** m, D.q)
    return EqPoint.of(prod, D.q)


# ---------------------------------------------------------------------------
# Summation divisors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SummationDivisor:
    """Adapted summation divisor: adjacent divisors ``D_{i,i+1}`` of degree
    ``mu_i - mu_{i+1}`` plus chosen points ``a_l`` (``mu_k < l <= mu_1``).

    Blocks are indexed from 0.  ``points[l - mu_k - 1]`` is ``a_l``; the
    divisor ``D_{i,j}`` is ``sum_{mu_j < l <= mu_i} [a_l]``.
    """

    slopes: tuple
    q: complex
    points: tuple

    def __post_init__(self):
        slopes = tuple(int(s) for s in self.slopes)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "q", complex(self.q))
        pts = tuple(complex(a) for a in self.points)
        object.__setattr__(self, "points", pts)
        if any(slopes[i] <= slopes[i + 1] for i in range(len(slopes) - 1)):
            raise ValidationError("slopes must be strictly decreasing")
        if len(pts) != slopes[0] - slopes[-1]:
            raise ValidationError(
                f"need {slopes[0] - slopes[-1]} chosen points, got {len(pts)}")
        if any(a == 0 for a in pts):
            raise ValidationError("chosen points must be nonzero")

    @classmethod
    def from_adjacent(cls, slopes, q, adjacent) -> "SummationDivisor":
        """Build from ``D_{i,i+1}`` given as ``EqDivisor`` (or point lists)."""
        slopes = tuple(int(s) for s in slopes)
        if len(adjacent) != len(slopes) - 1:
            raise ValidationError("need one adjacent divisor per consecutive pair of slopes")
        pts = []
        # l runs upward from mu_k + 1; the lowest l belong to D_{k-1,k}
        for i in range(len(slopes) - 2, -1, -1):
            D = adjacent[i]
            if not isinstance(D, EqDivisor):
                D = EqDivisor.from_points(q, D)
            if D.degree != slopes[i] - slopes[i + 1]:
                raise ValidationError(
                    f"D_({i},{i + 1}) has degree {D.degree}, expected {slopes[i] - slopes[i + 1]}")
            pts.extend(D.expanded())
        return cls(slopes, q, tuple(pts))

    @classmethod
    def concentrated(cls, slopes, q, alpha) -> "SummationDivisor":
        """Every ``D_{i,j} = mu_{i,j} [alpha]``."""
        return cls(slopes, q, (complex(alpha),) * (slopes[0] - slopes[-1]))

    @property
    def k(self) -> int:
        return len(self.slopes)

    def point(self, l: int) -> complex:
        return self.points[l - self.slopes[-1] - 1]

    def points_between(self, lower: int, upper: int):
        """``a_l`` for ``lower < l <= upper``."""
        return [self.point(l) for l in range(lower + 1, upper + 1)]

    def pair_points(self, i: int, j: int):
        return self.points_between(self.slopes[j], self.slopes[i])

    def D(self, i: int, j: int) -> EqDivisor:
        return EqDivisor.from_points(self.q, self.pair_points(i, j))

    def adjacent(self):
        return [self.D(i, i + 1) for i in range(self.k - 1)]

    def shifted(self, m: int = 1, which=None) -> "SummationDivisor":
        """Same divisor, other representatives: ``a_l -> a_l q**m``."""
        idx = range(len(self.points)) if which is None else which
        pts = list(self.points)
        for t in idx:
            pts[t] = pts[t] * self.q ** m
        return SummationDivisor(self.slopes, self.q, tuple(pts))

    def lifted_support(self, mmin: int = -2, mmax: int = 3):
        out = []
        for a in self.points:
            a0 = normalize(a, self.q)
            out.extend(a0 * self.q ** m for m in range(mmin, mmax + 1))
        return out

    def multiplicity_at(self, i: int, j: int, p: complex) -> int:
        return sum(1 for a in self.pair_points(i, j) if eq_distance(a, p, self.q) <= POINT_RTOL)

    def to_json(self):
        D = EqDivisor.from_points(self.q, list(self.points))
        return [{"re": p.representative.real, "im": p.representative.imag, "mult": m}
                for p, m in D.terms]


@dataclass(frozen=True)
class Allowedness:
    allowed: bool
    witness: tuple | None
    min_distance: float

    def __bool__(self):
        return self.allowed


def is_allowed(D: SummationDivisor, spectra, margin: float = DEFAULT_MARGIN,
               tol: float = 1e-10) -> Allowedness:
    """Check ``ev(D_{i,j})`` avoids the classes of ``(-1)**mu_ij s/t``.

    ``spectra[i]`` lists the eigenvalues of ``A_i``.  Returns the first
    violating ``(i, j, s, t)`` (0-based blocks) when not allowed.  A distance
    in ``[tol, margin)`` is refused as borderline.
    """
    if len(spectra) != D.k:
        raise ValidationError("one spectrum per block is required")
    best = math.inf
    borderline = None
    for i in range(D.k):
        for j in range(i + 1, D.k):
            e = ev_Eq(D.D(i, j)).representative
            mu = D.slopes[i] - D.slopes[j]
            for s in spectra[i]:
                for t in spectra[j]:
                    bad = (-1) ** mu * complex(s) / complex(t)
                    d = eq_distance(e, bad, D.q)
                    best = min(best, d)
                    if d < tol:
                        return Allowedness(False, (i, j, complex(s), complex(t)), d)
                    if d < margin and borderline is None:
                        borderline = ((i, j, complex(s), complex(t)), d)
    if borderline is not None:
        raise BorderlineDivisor(
            f"divisor within {borderline[1]:.3g} of a prohibited class; refusing to certify",
            witness=borderline[0], distance=borderline[1])
    return Allowedness(True, None, best)


# ---------------------------------------------------------------------------
# Theta multipliers t_i
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThetaGauge:
    """The diagonal gauge ``Theta_D = diag(t_i I_{r_i})`` with

        t_i = theta**mu_k * prod_{mu_k < l <= mu_i} theta_{-a_l},
        sigma_q t_i = alpha_i z**mu_i t_i,   alpha_i = prod (-1/a_l).
    """

    divisor: SummationDivisor

    @property
    def q(self):
        return self.divisor.q

    @property
    def slopes(self):
        return self.divisor.slopes

    @property
    def theta_power(self) -> int:
        return self.slopes[-1]

    def factors(self, i: int):
        return self.divisor.points_between(self.slopes[-1], self.slopes[i])

    def alpha(self, i: int) -> complex:
        out = 1.0 + 0j
        for a in self.factors(i):
            out *= -1.0 / a
        return out

    @property
    def alphas(self):
        return [self.alpha(i) for i in range(len(self.slopes))]

    def log_t(self, i: int, z: complex):
        """``(log|t_i(z)|, phase)``."""
        la, ph = theta_log(self.q, z)
        la *= self.theta_power
        ph = ph ** self.theta_power
        for a in self.factors(i):
            l2, p2 = theta_log(self.q, z, -a)
            la += l2
            ph *= p2
        return la, ph

    def t(self, i: int, z: complex) -> complex:
        la, ph = self.log_t(i, z)
        return ph * math.exp(la) if la > -math.inf else 0j

    def ratio(self, j: int, i: int, z: complex) -> complex:
        """``t_j(z) / t_i(z)`` for ``i <= j``: ``1 / prod_{mu_j<l<=mu_i} theta_{-a_l}(z)``."""
        if i == j:
            return 1.0 + 0j
        la, ph = self.log_ratio(j, i, z)
        if la > 700:
            raise PoleProximity(f"t_{j}/t_{i} blows up at z={z}")
        return ph * math.exp(la)

    def log_ratio(self, j: int, i: int, z: complex):
        la, ph = 0.0, 1.0 + 0j
        for a in self.divisor.pair_points(i, j):
            l2, p2 = theta_log(self.q, z, -a)
            la += l2
            ph *= p2
        return -la, ph.conjugate()

    def log_ratio_many(self, j: int, i: int, zs):
        zs = np.asarray(zs, dtype=complex).ravel()
        la = np.zeros(zs.size)
        ph = np.ones(zs.size, dtype=complex)
        for a in self.divisor.pair_points(i, j):
            l2, p2 = theta_log_many(self.q, zs, -a)
            la += l2
            ph *= p2
        return -la, ph.conj()

    def ratio_many(self, j: int, i: int, zs) -> np.ndarray:
        """Vectorized :meth:`ratio`."""
        if i == j:
            return np.ones(np.asarray(zs).size, dtype=complex)
        la, ph = self.log_ratio_many(j, i, zs)
        if np.any(la > 700):
            z = np.asarray(zs).ravel()[int(np.argmax(la))]
            raise PoleProximity(f"t_{j}/t_{i} blows up at z={z}")
        return ph * np.exp(la)

    def t_pair_series(self, ctx: QContext, i: int, j: int) -> WindowedLaurent:
        """Laurent window of ``t_{i,j} = sigma_q t_i / t_j``
        ``= alpha_i z**mu_i prod_{mu_j < l <= mu_i} theta_{-a_l}``, holomorphic on C*."""
        out = WindowedLaurent.monomial(ctx, self.slopes[i], self.alpha(i))
        for a in self.divisor.pair_points(i, j):
            out = out * theta_coeffs(ctx, -a)
        return out

    def t_pair(self, i: int, j: int, z: complex) -> complex:
        """Point value of ``t_{i,j}``."""
        val = self.alpha(i) * complex(z) ** self.slopes[i]
        for a in self.divisor.pair_points(i, j):
            val *= theta_value(self.q, z, -a)
        return val
