"""Stokes cocycles, q-Gevrey flatness, level filtration and classification.

For two allowed divisors the privileged Stokes component is
``F_{D,D'}(U) = F_D(U)^-1 F_{D'}(U)`` where ``F_D(U)[A_0] = A_U``.  Each
component fixes ``A_0``: ``C(qz) A_0(z) = A_0(z) C(z)``, and blockwise
``C_ij(z/q) = (z/q)^(mu_i - mu_j) A_i^-1 C_ij(z) A_j``.  The last identity
is how values deep along a ray towards 0 are produced: direct evaluation
there cancels catastrophically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CertificationFailure, DegenerateFit, InconclusiveClassification,
                     ValidationError)
from .laurent import SeriesMatrix
from .normalform import red_pair
from .summation import CERT_TOL, SummedGauge, gauge_from_zero, sample_grid, sum_gauge
from .system import BlockMatrix, BlockShape
from .theta import SummationDivisor, eq_distance, normalize

VANISH_RTOL = 1e-9
POLE_RTOL = 1e-6
NU_TOL = 1e-8


# ---------------------------------------------------------------------------
# Cocycles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StokesCocycle:
    """Components ``F_{D,D'}`` for an ordered list of divisors."""

    A: BlockMatrix
    divisors: tuple
    gauges: tuple
    certificate: dict = field(default_factory=dict)

    @property
    def shape(self) -> BlockShape:
        return self.A.shape

    @property
    def m(self) -> int:
        return len(self.divisors)

    def avoid(self):
        pts = []
        for D in self.divisors:
            pts.extend(D.lifted_support(-3, 4))
        return pts

    def gauge_value(self, a: int, z) -> np.ndarray:
        return self.gauges[a].evaluate(z)

    def component(self, a: int, b: int, z) -> np.ndarray:
        """``F_{D_a}(U)(z)^-1 F_{D_b}(U)(z)``."""
        Fa = self.gauges[a].evaluate(z)
        Fb = self.gauges[b].evaluate(z)
        return np.linalg.solve(Fa, Fb)

    def identity_residual(self, a: int, b: int, c: int, z) -> float:
        """``|F_{a,c} - F_{a,b} F_{b,c}|`` relative to ``|F_{a,c}|``."""
        Cac = self.component(a, c, z)
        prod = self.component(a, b, z) @ self.component(b, c, z)
        return float(np.linalg.norm(Cac - prod) / max(np.linalg.norm(Cac), 1.0))

    def fixing_residual(self, a: int, b: int, z) -> float:
        """``|C(qz) A_0(z) - A_0(z) C(z)| / |A_0(z)|``."""
        A0 = BlockMatrix(self.A.ctx, self.shape, {}).evaluate(z)
        q = self.A.ctx.q
        lhs = self.component(a, b, q * z) @ A0
        rhs = A0 @ self.component(a, b, z)
        return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(A0))

    def conjugate(self, a: int, z, Phi) -> np.ndarray:
        """``F_{D_a}(U) Phi F_{D_a}(U)^-1`` at ``z``."""
        F = self.gauges[a].evaluate(z)
        return F @ np.asarray(Phi, dtype=complex) @ np.linalg.inv(F)

    def ray_log_values(self, a: int, b: int, i: int, j: int, z0: complex, M: int,
                       cross_check: int = 3, rtol: float = 1e-6):
        """``log |C_ij(z_m)|`` for ``z_m = z0 q^-m``, ``m = 1..M`` (Frobenius norm).

        Values come from transporting ``C(z0)`` with the exact ``A_0``
        relation; the first ``cross_check`` of them are compared with
        direct evaluation.
        """
        shape = self.shape
        q = complex(self.A.ctx.q)
        off = shape.offsets
        d = shape.gap(i, j)
        Ai_inv = np.linalg.inv(shape.constants[i])
        Aj = shape.constants[j]
        C0 = self.component(a, b, z0)[off[i]:off[i + 1], off[j]:off[j + 1]]
        nrm = np.linalg.norm(C0)
        if nrm == 0:
            return np.full(M, -np.inf)
        N = C0 / nrm
        logscale = math.log(nrm)
        out = np.empty(M)
        z = complex(z0)
        for m in range(1, M + 1):
            z = z / q
            N = (Ai_inv @ N @ Aj) * (z / abs(z)) ** d
            s = np.linalg.norm(N)
            N = N / s
            logscale += d * math.log(abs(z)) + math.log(s)
            out[m - 1] = logscale
            if m <= cross_check:
                direct = self.component(a, b, z)[off[i]:off[i + 1], off[j]:off[j + 1]]
                ref = math.exp(logscale)
                err = np.linalg.norm(direct - ref * N) / ref
                if not err <= rtol:
                    raise CertificationFailure(
                        f"ray transport disagrees with direct evaluation at m={m} ({err:.2e})",
                        report={"m": m, "error": float(err)})
        return out


def build_cocycle(A_U: BlockMatrix, divisors, *, grid=None, seed: int = 0,
                  tol: float = 1e-8) -> StokesCocycle:
    """Privileged cocycle of ``A_U`` on the given divisors, certified on a grid.

    Certified: the identity ``F_{a,c} = F_{a,b} F_{b,c}`` for every triple
    of consecutive divisors and ``F_{a,b}[A_0] = A_0`` for every pair.
    """
    divisors = tuple(divisors)
    if len(divisors) < 2:
        raise ValidationError("a cocycle needs at least two divisors")
    gauges = tuple(gauge_from_zero(A_U, D, seed=seed) for D in divisors)
    coc = StokesCocycle(A_U, divisors, gauges)
    pts = sample_grid(A_U.ctx.q, seed=seed, avoid=coc.avoid()) if grid is None else grid
    worst_id, worst_fix, where = 0.0, 0.0, None
    m = len(divisors)
    q = A_U.ctx.q
    A0 = BlockMatrix(A_U.ctx, A_U.shape, {})
    for z in pts:
        Fz = [g.evaluate(z) for g in gauges]
        Fqz = [g.evaluate(q * z) for g in gauges]
        A0z = A0.evaluate(z)
        nA0 = np.linalg.norm(A0z)
        C = {(a, b): np.linalg.solve(Fz[a], Fz[b]) for a in range(m) for b in range(m)}
        for a in range(m):
            for b in range(m):
                if a == b:
                    continue
                Cq = np.linalg.solve(Fqz[a], Fqz[b])
                r = float(np.linalg.norm(Cq @ A0z - A0z @ C[(a, b)]) / nA0)
                if r > worst_fix:
                    worst_fix = r
                    where = ("fixing", a, b, complex(z))
                for c in range(m):
                    if c in (a, b):
                        continue
                    Cac = C[(a, c)]
                    r = float(np.linalg.norm(Cac - C[(a, b)] @ C[(b, c)])
                              / max(np.linalg.norm(Cac), 1.0))
                    if r > worst_id:
                        worst_id = r
                        where = ("identity", a, b, c, complex(z))
    cert = {"identity_residual": worst_id, "fixing_residual": worst_fix,
            "n_points": len(pts), "tol": tol, "worst": where}
    if worst_id > tol or worst_fix > max(tol, CERT_TOL):
        raise CertificationFailure(f"cocycle certification failed: {where}", report=cert)
    coc.certificate.update(cert)
    return coc


# ---------------------------------------------------------------------------
# Flatness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlatnessFit:
    level: float
    linear: float
    const: float
    rms: float


def flatness_level(values, q: complex, *, log: bool = False, m0: int = 1) -> FlatnessFit:
    """Fit ``log|v_m| = c0 + c1 m - t m^2 ln|q| / 2`` along ``z_m = z0 q^-m``.

    ``values`` are the block values (or, with ``log=True``, their log
    magnitudes) for ``m = m0, m0+1, ...``.  Returns ``t`` as ``level``.
    """
    v = np.asarray(values)
    y = v.astype(float) if log else np.log(np.abs(v).astype(float))
    if y.ndim != 1 or y.size < 15:
        raise ValidationError("flatness fit needs at least 15 ray values")
    if not np.all(np.isfinite(y)):
        raise DegenerateFit("ray values vanish or overflow")
    m = np.arange(m0, m0 + y.size, dtype=float)
    X = np.column_stack([np.ones_like(m), m, -m * m * math.log(abs(q)) / 2])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    if not np.all(np.isfinite(coef)):
        raise DegenerateFit("least-squares fit failed")
    rms = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    return FlatnessFit(float(coef[2]), float(coef[1]), float(coef[0]), rms)


@dataclass(frozen=True)
class LevelPattern:
    """Blocks of the level-``t`` piece of the Stokes group (0-based indices)."""

    slopes: tuple
    t: int
    active: frozenset
    graded: frozenset

    def one_based(self):
        return (sorted((i + 1, j + 1) for i, j in self.active),
                sorted((i + 1, j + 1) for i, j in self.graded))

    def mask(self, ranks) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(ranks)]).astype(int)
        out = np.zeros((off[-1], off[-1]), dtype=bool)
        for i, j in self.active:
            out[off[i]:off[i + 1], off[j]:off[j + 1]] = True
        return out


def level_pattern(shape_or_slopes, t: int) -> LevelPattern:
    slopes = shape_or_slopes.slopes if isinstance(shape_or_slopes, BlockShape) \
        else tuple(shape_or_slopes)
    if t < 0:
        raise ValidationError("level must be nonnegative")
    k = len(slopes)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    return LevelPattern(tuple(slopes), t,
                        frozenset(p for p in pairs if slopes[p[0]] - slopes[p[1]] >= t),
                        frozenset(p for p in pairs if slopes[p[0]] - slopes[p[1]] == t))


# ---------------------------------------------------------------------------
# exp / log on nilpotent block matrices
# ---------------------------------------------------------------------------

def _check_strict_upper(f):
    if isinstance(f, SeriesMatrix):
        c = f.padded(f.lo, f.hi)
        mags = np.abs(c) if not f.extended else np.vectorize(lambda x: float(abs(x)))(c)
        low = np.tril(np.ones(f.shape, dtype=bool))
        if np.any(mags[low] != 0):
            raise ValidationError("expected a strictly upper triangular matrix")
        return f.rows
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[0] != f.shape[1] or np.any(np.tril(f) != 0):
        raise ValidationError("expected a strictly upper triangular matrix")
    return f.shape[0]


def _eye_like(f, n):
    if isinstance(f, SeriesMatrix):
        return SeriesMatrix.identity(f.ctx, n)
    return np.eye(n, dtype=complex)


def nilpotent_exp(f):
    """``exp(f) = sum_{k<n} f^k / k!`` for strictly upper ``f``."""
    n = _check_strict_upper(f)
    out = _eye_like(f, n)
    term = _eye_like(f, n)
    for k in range(1, n):
        term = (term @ f) * (1.0 / k)
        out = out + term
    return out


def unipotent_log(F):
    """``log(F) = sum_{k<n} (-1)^(k+1) (F - I)^k / k`` for unipotent upper ``F``."""
    if isinstance(F, SeriesMatrix):
        N = F - SeriesMatrix.identity(F.ctx, F.rows)
    else:
        F = np.asarray(F, dtype=complex)
        N = F - np.eye(F.shape[0])
    n = _check_strict_upper(N)
    out = None
    power = _eye_like(N, n)
    for k in range(1, n):
        power = power @ N
        term = power * ((-1.0) ** (k + 1) / k)
        out = term if out is None else out + term
    if out is None:
        return N * 0.0
    return out


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

@dataclass
class PoleReport:
    block: tuple
    point: complex
    multiplicity: int
    vanishing_order: int
    eval_ratios: list
    slope_order: float

    @property
    def pole_order(self) -> int:
        return self.multiplicity - self.vanishing_order


@dataclass
class ClassificationVerdict:
    equivalent: bool
    gauge: SummedGauge
    residual: float
    witness: tuple | None = None
    reports: list = field(default_factory=list)
    nu_check: dict | None = None


def _euler_derivative_series(S: SeriesMatrix, k: int) -> SeriesMatrix:
    if k == 0:
        return S
    n = np.arange(S.lo, S.hi + 1, dtype=float)
    return S._new(S.lo, S.c * n ** k, exact=S.exact_window, clip=False)


def _abs_sum(S: SeriesMatrix, z: complex, k: int) -> float:
    n = np.arange(S.lo, S.hi + 1, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        w = np.abs(n) ** k * np.exp(n * math.log(abs(z)))
    c = np.abs(S.c) if not S.extended else np.vectorize(lambda x: float(abs(x)))(S.c)
    return float(np.max(np.sum(c * w, axis=-1)))


def pole_report(G: SummedGauge, i: int, j: int, p: complex, mult: int,
                eps=(1e-2, 1e-3), vanish_rtol=VANISH_RTOL, pole_rtol=POLE_RTOL) -> PoleReport:
    """Measure the pole of ``F_ij`` at the support point ``p``.

    ``F_ij`` is pole-free at ``p`` iff ``F'_ij`` vanishes there to order
    ``mult``; the Euler derivatives ``(z d/dz)^k F'_ij (p)``, ``k < mult``,
    are compared with their absolute-sum scale.  A log-slope fit of
    ``|F_ij|`` along ``p (1 + eps e^{i phi})`` corroborates; when a pole
    is seen, ``eps`` is scaled by the measured ratio so the pole term
    dominates the regular part at both radii.
    """
    S = G.flat_block(i, j)
    ratios = []
    vanish = 0
    for k in range(mult):
        val = np.abs(_euler_derivative_series(S, k).evaluate(p)).max()
        scale = _abs_sum(S, p, k)
        r = float(val / scale) if scale > 0 else 0.0
        ratios.append(r)
        if r <= vanish_rtol:
            vanish += 1
            continue
        if r >= pole_rtol:
            break
        raise InconclusiveClassification(
            f"block ({i},{j}) at {p:.6g}: derivative {k} ratio {r:.2e} in the inconclusive band")
    if vanish < mult:
        # the pole term ~ r / e only dominates the regular part once e << r
        e1 = min(eps[0], max(1e-9, eps[0] * ratios[-1]))
        eps = (e1, e1 * eps[1] / eps[0])
    slopes = []
    for phi in (0.3, 2.4, 4.4):
        e1, e2 = eps
        vals = []
        for e in (e1, e2):
            z = p * (1 + e * complex(math.cos(phi), math.sin(phi)))
            v = np.linalg.norm(G.block(i, j, z))
            vals.append(v)
        if min(vals) == 0:
            slopes.append(0.0)
            continue
        slopes.append(-(math.log(vals[1]) - math.log(vals[0])) / (math.log(e2) - math.log(e1)))
    return PoleReport((i, j), p, mult, vanish, ratios, float(np.median(slopes)))


def support_points(D: SummationDivisor, i: int, j: int):
    """Distinct points of ``D_ij`` (fundamental representatives) with multiplicity."""
    out = []
    for a in D.pair_points(i, j):
        a0 = normalize(a, D.q)
        for entry in out:
            if eq_distance(entry[0], a0, D.q) <= 1e-8:
                entry[1] += 1
                break
        else:
            out.append([a0, 1])
    return [(p, m) for p, m in out]


def nu_difference(A_U: BlockMatrix, A_V: BlockMatrix) -> np.ndarray | None:
    """For two blocks, the difference of the normal-form blocks of ``A_U``, ``A_V``.

    With two slopes the normal form is a complete analytic invariant; for
    slopes ``(0, -1)`` and ``A = 1`` it is ``nu(u) - nu(v)``.  ``None`` for
    more than two blocks.
    """
    sh = A_U.shape
    if sh.k != 2:
        return None
    args = (sh.slopes[0], sh.constants[0], sh.slopes[1], sh.constants[1])
    _, VU = red_pair(*args, A_U.U(0, 1))
    _, VV = red_pair(*args, A_V.U(0, 1))
    return (VU - VV).c


def classify_pair(A_U: BlockMatrix, A_V: BlockMatrix, D: SummationDivisor, *,
                  seed: int = 0, nu_tol: float = NU_TOL) -> ClassificationVerdict:
    """Analytic equivalence of ``A_U`` and ``A_V`` through the poles of ``F_D(U, V)``.

    Equivalent iff every ``F_ij`` is pole-free on the support of ``D_ij``.
    For two blocks the verdict is cross-checked against the normal-form
    invariant; disagreement is refused as inconclusive.
    """
    G = sum_gauge(A_U, A_V, D, seed=seed)
    reports = []
    witness = None
    for i, j in A_U.shape.pairs():
        for p, mult in support_points(D, i, j):
            for lift in (0, 1):
                pt = p * complex(D.q) ** lift
                rep = pole_report(G, i, j, pt, mult)
                reports.append(rep)
                pole = rep.pole_order > 0
                if pole != (rep.slope_order >= 0.5):
                    raise InconclusiveClassification(
                        f"block ({i},{j}) at {pt:.6g}: evaluation says pole order "
                        f"{rep.pole_order}, slope fit says {rep.slope_order:.2f}")
                if pole and witness is None:
                    witness = (i, j, pt)
    equivalent = witness is None
    nu = nu_difference(A_U, A_V)
    nu_check = None
    if nu is not None:
        size = float(np.max(np.abs(nu))) if nu.size else 0.0
        nu_check = {"max_abs": size, "tol": nu_tol, "equivalent": size <= nu_tol}
        if nu_check["equivalent"] != equivalent:
            raise InconclusiveClassification(
                f"pole test ({'equivalent' if equivalent else 'not equivalent'}) disagrees "
                f"with the normal-form invariant (|dV| = {size:.2e})")
    return ClassificationVerdict(equivalent, G, G.certificate.get("max_residual", math.nan),
                                 witness, reports, nu_check)
