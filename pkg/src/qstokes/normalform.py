"""q-Borel transforms, the obstruction invariant, formal gauges and
Birkhoff-Guenther normal forms.

Conventions.  A gauge ``F`` links ``A_U`` to ``A_V`` when
``(sigma_q F) A_U = A_V F``.  For a block pair of slopes ``mu > mu'`` with
gap ``d = mu - mu'`` the homological equation solved by :func:`red_pair` is::

    (sigma_q F) z^-mu' A' - z^-mu A F = V - U

and the normal-form block ``V`` is supported in degrees ``[-mu, -mu' - 1]``,
i.e. ``z^-mu A V`` has its coefficients in degrees ``0 .. d-1`` of the
``F``-grid.  For slopes ``(0, -1)`` this makes ``V`` a constant, the
obstruction ``nu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

from .errors import NonConvergence, ValidationError, WindowTooSmall
from .laurent import (SeriesMatrix, WindowedLaurent, gaussian_weights, qpowers,
                      to_extended)
from .system import BlockMatrix, BlockShape, GaugeElement, gauge_residual, graded_part


class NotAGerm(ValidationError):
    """Input coefficients do not decay at a window edge."""


def _weights_overflow(q, lo, hi, level) -> bool:
    worst = max(abs(n * (n - 1)) for n in (lo, hi)) / 2
    return worst * level * math.log(abs(q)) > 600


def qborel(f: WindowedLaurent, d: int = 1) -> WindowedLaurent:
    """Level-``d`` q-Borel transform ``a_n -> q**(-d n(n-1)/2) a_n``.

    The result is held in extended precision when the weights leave the
    double range on the window.
    """
    if d < 1:
        raise ValidationError("Borel level must be a positive integer")
    ext = f.extended or _weights_overflow(f.ctx.q, f.lo, f.hi, d)
    w = gaussian_weights(f.ctx.q, f.lo, f.hi, level=d, extended=ext)
    c = to_extended(f.c) if ext else f.c
    return f._new(f.lo, c * w, exact=f.exact_window, clip=False)


def nu_invariant(u: WindowedLaurent, d: int = 1, r: int = 0, tol: float | None = None) -> complex:
    """``sum_m (q^d)^(-m(m-1)/2) q^(-r m) u_{r + m d}``.

    For ``d = 1, r = 0`` this is ``B_{q,1} u (1)``.  When ``u`` carries a
    tail on either side the weighted edge term must be negligible.
    """
    tol = u.ctx.tol if tol is None else tol
    q = mpmath.mpc(u.ctx.q)
    qd = q ** d
    ms = [m for m in range((u.lo - r) // d - 1, (u.hi - r) // d + 2)
          if u.lo <= r + m * d <= u.hi]
    if not ms:
        return 0j
    terms = []
    for m in ms:
        c = u.coefficient(r + m * d)
        c = mpmath.mpc(complex(c)) if not isinstance(c, mpmath.mpc) else c
        terms.append(qd ** (-m * (m - 1) // 2) * q ** (-r * m) * c)
    mags = [abs(t) for t in terms]
    top = max(mags)
    if top > 0:
        if u.tail_lo and mags[0] > tol * top:
            raise WindowTooSmall("weighted lower tail of u is not negligible")
        if u.tail_hi and mags[-1] > tol * top:
            raise WindowTooSmall("weighted upper tail of u is not negligible")
    return complex(mpmath.fsum(terms))


def normal_window(shape: BlockShape, i: int, j: int):
    """Degrees allowed in the normal-form block ``V_ij``."""
    return -shape.slopes[i], -shape.slopes[j] - 1


# ---------------------------------------------------------------------------
# Convergence verdicts
# ---------------------------------------------------------------------------

def log_curvature(f, side: str = "hi", frac: float = 0.25) -> float:
    """Mean second difference of ``log|f_n|`` over the outer ``frac`` of the window.

    ``~ ln|q|`` for q-Gevrey series of level 1, ``~ 0`` for convergent ones.
    """
    la = f.log_abs_coeffs()
    if side == "lo":
        la = la[::-1]
    n = len(la)
    seg = la[max(0, n - max(4, int(math.ceil(frac * n)))):]
    seg = seg[np.isfinite(seg)]
    if seg.size < 3:
        return 0.0
    return float(np.mean(np.diff(seg, 2)))


def convergence_verdict(f, side: str = "hi", band=(0.3, 0.7)) -> bool:
    """True when ``f`` looks like a convergent series on ``side``.

    The decision compares the log-curvature of the top quarter of the
    coefficients with ``ln|q| / 2``; values inside ``band * ln|q|`` are
    refused.
    """
    lq = f.ctx.logq
    curv = log_curvature(f, side)
    if band[0] * lq <= curv <= band[1] * lq:
        raise NonConvergence(f"borderline growth (log-curvature {curv:.3g}, ln|q| = {lq:.3g})")
    return curv < 0.5 * lq


def edge_ratio(f, side: str = "hi", frac: float = 0.25) -> float:
    """Geometric ratio ``|f_{n+1}| / |f_n|`` fitted on the outer window quarter."""
    la = f.log_abs_coeffs()
    if side == "lo":
        la = la[::-1]
    n = len(la)
    k = max(4, int(math.ceil(frac * n)))
    seg = la[n - k:]
    x = np.arange(seg.size)[np.isfinite(seg)]
    seg = seg[np.isfinite(seg)]
    if seg.size < 2:
        return 0.0
    return float(math.exp(np.polyfit(x, seg, 1)[0]))


# ---------------------------------------------------------------------------
# Formal fixpoint
# ---------------------------------------------------------------------------

def _formal_solve(A_src: BlockMatrix, A_dst: BlockMatrix, order: int, tol: float):
    """Formal ``F`` in the unipotent group with ``(sigma_q F) A_src = A_dst F``.

    Block ``(i, j)`` is the fixpoint of
    ``F_ij = z^mu_i A_i^-1 ((sigma_q F_ij) z^-mu_j A_j - W)`` with
    ``W = V_ij - U_ij + sum_{i<l<j} (V_il F_lj - (sigma_q F_il) U_lj)``
    (``U`` from the source, ``V`` from the target), iterated from zero.
    The map raises valuations by ``mu_i - mu_j``, so sweeps settle.
    """
    ctx, shape = A_src.ctx, A_src.shape
    if not shape.same_as(A_dst.shape):
        raise ValidationError("source and target shapes differ")
    if order > ctx.N:
        raise ValidationError(f"order {order} exceeds the window half-width {ctx.N}")
    F: dict = {}
    for i, j in shape.pairs():
        W = (A_dst.U(i, j) - A_src.U(i, j)).to_extended()
        for l in range(i + 1, j):
            W = W + A_dst.U(i, l) @ F[(l, j)] - F[(i, l)].sigma(1) @ A_src.U(l, j)
        mi, mj = shape.slopes[i], shape.slopes[j]
        # degree m of F only sees W_{m - mu_i}
        W = W.restrict(W.lo, order - mi)
        Ainv = np.linalg.inv(shape.constants[i])
        Aj = shape.constants[j]
        lo = W.lo + mi
        if lo > order or W.max_abs() == 0:
            F[(i, j)] = SeriesMatrix.zeros(ctx, *W.shape).to_extended()
            continue
        cur = SeriesMatrix(ctx, lo, np.zeros(W.shape + (order - lo + 1,), dtype=complex)
                           ).to_extended()
        for _ in range((order - lo) + 10):
            nxt = Ainv @ ((cur.sigma(1) @ Aj).shift(-mj) - W)
            nxt = nxt.shift(mi).restrict(lo, order)
            done = _settled(nxt - cur, nxt, tol)
            cur = nxt
            if done:
                break
        else:
            raise NonConvergence(f"fixpoint for block ({i},{j}) did not settle")
        F[(i, j)] = cur.with_tails(False, True)
    return GaugeElement(ctx, shape, F)


def formal_fixpoint(A: BlockMatrix, order: int, *, tol: float | None = None) -> GaugeElement:
    """The formal gauge ``F^(U)`` with ``F^(U)[A_0] = A_U``, through degree ``order``.

    Coefficients are kept in extended precision: level-1 growth like
    ``q**(n(n-1)/2)`` leaves the double range quickly.
    """
    tol = A.ctx.tol if tol is None else tol
    return _formal_solve(graded_part(A), A, order, tol)


def _settled(diff: SeriesMatrix, ref: SeriesMatrix, tol: float) -> bool:
    lo, hi = ref.lo, ref.hi
    d = diff.padded(lo, hi)
    r = ref.padded(lo, hi)
    for x, y in zip(d.ravel(), r.ravel()):
        if abs(x) > tol * max(abs(y), 1e-300):
            return False
    return True


def formal_link(A_U: BlockMatrix, A_V: BlockMatrix, order: int, *,
                tol: float | None = None, prec: int | None = None) -> GaugeElement:
    """``F^(U,V)``, the formal gauge with ``F^(U,V)[A_U] = A_V``.

    It equals ``F^(V) F^(U)^-1`` but is solved directly, since that
    product cancels divergent coefficients.  The forward recurrence
    amplifies rounding like ``|q|^(m^2/2d)``, so for float data the result
    is a backward-stable formal solution rather than the convergent gauge
    (see :func:`formal_residual`); ``prec`` sets the working bits.
    """
    tol = A_U.ctx.tol if tol is None else tol
    if prec is None:
        return _formal_solve(A_U, A_V, order, tol)
    with mpmath.workprec(prec):
        return _formal_solve(A_U, A_V, order, tol)


def _abs_series(S: SeriesMatrix) -> SeriesMatrix:
    c = S.c
    if S.extended:
        mag = np.empty(c.shape, dtype=object)
        for idx in np.ndindex(*c.shape):
            mag[idx] = mpmath.mpc(abs(c[idx]))
    else:
        mag = np.abs(c).astype(complex)
    return S._new(S.lo, mag, exact=S.exact_window, clip=False)


def formal_residual(F: GaugeElement, A_src: BlockMatrix, A_dst: BlockMatrix,
                    order: int | None = None) -> float:
    """Worst per-degree backward error of ``F[A_src] = A_dst``.

    Degree ``n`` of ``(sigma F) A_src - A_dst F`` is divided by degree ``n``
    of ``|sigma F| |A_src| + |A_dst| |F|`` (entrywise magnitudes), so
    cancellation between huge divergent terms is measured against the
    terms themselves.  Only degrees exact on both sides count.
    """
    Fs = F.to_series()
    sF, As, Ad = Fs.sigma(1), A_src.to_series(), A_dst.to_series()
    diff = sF @ As - Ad @ Fs
    scale = _abs_series(sF) @ _abs_series(As) + _abs_series(Ad) @ _abs_series(Fs)
    lo, hi = diff.elo, diff.ehi
    if order is not None:
        hi = min(hi, order)
    worst = 0.0
    dp, sp = diff.padded(lo, hi), scale.padded(lo, hi)
    for n in range(hi - lo + 1):
        num = max((abs(x) for x in dp[..., n].ravel()), default=0)
        if num == 0:
            continue
        den = max((abs(x) for x in sp[..., n].ravel()), default=0)
        worst = max(worst, float(num / den) if den else math.inf)
    return worst


# ---------------------------------------------------------------------------
# The pairwise reduction Red
# ---------------------------------------------------------------------------

def red_pair(mu: int, A, mu2: int, A2, U: SeriesMatrix):
    """Solve ``(sigma_q F) z^-mu2 A2 - z^-mu A F = V - U`` for a germ ``F``.

    Returns ``(F, V)`` with ``V`` supported in degrees ``[-mu, -mu2 - 1]``.
    Writing ``d = mu - mu2`` and ``W = V - U``, the degree ``m - mu``
    equation reads ``q^(m-d) F_{m-d} A2 - A F_m = W_{m-mu}``; it is run
    forwards for ``m < 0`` and backwards (``F_m`` from ``F_{m+d}``) for
    ``m >= 0``, which leaves the equations at ``m = 0..d-1`` to fix ``V``.
    """
    if isinstance(U, WindowedLaurent):
        U = U.as_matrix()
    mu, mu2 = int(mu), int(mu2)
    d = mu - mu2
    if d <= 0:
        raise ValidationError("red_pair needs mu > mu2")
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    A2 = np.atleast_2d(np.asarray(A2, dtype=complex))
    ctx = U.ctx
    q = ctx.q
    if U.extended:
        U = U.to_complex()
    Ainv, A2inv = np.linalg.inv(A), np.linalg.inv(A2)
    r, s = U.shape
    ulo, uhi = U.lo, U.hi
    mlo = min(ulo + mu, 0)
    mhi = max(uhi + mu2, d - 1)
    F = np.zeros((r, s, mhi - mlo + 1), dtype=complex)
    qp = qpowers(q, mlo - d, mhi + d)

    def Uc(n):
        return U.c[:, :, n - ulo] if ulo <= n <= uhi else 0.0

    def Fc(m):
        return F[:, :, m - mlo] if mlo <= m <= mhi else np.zeros((r, s), dtype=complex)

    for m in range(mlo, 0):
        # W_{m-mu} = -U_{m-mu} here
        F[:, :, m - mlo] = Ainv @ (qp[m - d - mlo + d] * Fc(m - d) @ A2 + Uc(m - mu))
    for m in range(mhi, -1, -1):
        F[:, :, m - mlo] = (A @ Fc(m + d) - Uc(m + d - mu)) @ A2inv / qp[m - mlo + d]
    vlo, vhi = -mu, -mu2 - 1
    V = np.zeros((r, s, d), dtype=complex)
    for m in range(d):
        n = m - mu
        V[:, :, m] = Uc(n) + qp[m - d - mlo + d] * Fc(m - d) @ A2 - A @ Fc(m)
    Fs = SeriesMatrix(ctx, mlo, F, tails=(U.tail_lo, U.tail_hi), lossy=U.lossy)
    Vs = SeriesMatrix(ctx, vlo, V)
    assert Vs.hi == vhi
    return Fs, Vs


def red_residual(mu, A, mu2, A2, U, F, V) -> float:
    """Relative size of ``(sigma F) z^-mu2 A2 - z^-mu A F - (V - U)``."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    A2 = np.atleast_2d(np.asarray(A2, dtype=complex))
    lhs = (F.sigma(1) @ A2).shift(-mu2) - (A @ F).shift(-mu)
    rhs = V - U
    ref = max(lhs.max_abs(), rhs.max_abs(), U.max_abs(), 1e-300)
    return (lhs - rhs).residual_norm(exact_only=False) / ref


def tail_sum_pair(mu: int, a: complex, mu2: int, a2: complex, u: WindowedLaurent):
    """Scalar ``red_pair`` through explicit tail sums.

    On the residue class ``m = rho + j d`` put ``f_j = F_m``,
    ``omega_j = W_{m - mu}`` and ``c_j = (a/a2)^j q^-(d j(j-1)/2 + rho j)``.
    Then ``g_j = c_j f_j`` satisfies ``g_{j-1} - g_j = c_j omega_j / a``, so
    ``g_j = sum_{k>j} c_k omega_k / a = -sum_{k<=j} c_k omega_k / a`` and
    ``V_{rho-mu} = sum_k c_k U_{rho+kd-mu}`` makes the two sums agree.
    Returns ``(F, V)`` as ``WindowedLaurent``.
    """
    if isinstance(u, SeriesMatrix):
        if u.shape != (1, 1):
            raise ValidationError("tail_sum_pair is scalar")
        u = u.entry(0, 0)
    d = mu - mu2
    if d <= 0:
        raise ValidationError("tail_sum_pair needs mu > mu2")
    a, a2 = complex(a), complex(a2)
    ctx = u.ctx
    q = ctx.q
    if u.extended:
        u = u.to_complex()
    ulo, uhi = u.lo, u.hi
    mlo = min(ulo + mu, 0)
    mhi = max(uhi + mu2, d - 1)
    F = np.zeros(mhi - mlo + 1, dtype=complex)
    V = np.zeros(d, dtype=complex)
    ratio = a / a2

    def uc(n):
        return complex(u.c[n - ulo]) if ulo <= n <= uhi else 0j

    for rho in range(d):
        jlo = -((rho - mlo) // d) - 1
        jhi = (mhi + d - rho) // d + 1
        js = list(range(jlo, jhi + 1))
        e = {j: d * j * (j - 1) // 2 + rho * j for j in js}
        Uj = {j: uc(rho + j * d - mu) for j in js}
        # c_k / c_j = ratio^(k-j) q^(e(j)-e(k))
        v = sum(ratio ** k * q ** (-e[k]) * Uj[k] for k in js)
        V[rho] = v
        om = {j: (v if j == 0 else 0j) - Uj[j] for j in js}
        for j in js:
            m = rho + j * d
            if not mlo <= m <= mhi:
                continue
            if j >= 0:
                s = sum(ratio ** (k - j) * q ** (e[j] - e[k]) * om[k] for k in js if k > j)
            else:
                s = -sum(ratio ** (k - j) * q ** (e[j] - e[k]) * om[k] for k in js if k <= j)
            F[m - mlo] = s / a
    return WindowedLaurent(ctx, mlo, F), WindowedLaurent(ctx, -mu, V)


# ---------------------------------------------------------------------------
# Multi-block normal forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NormalFormResult:
    """Gauge ``F`` with ``F[A_U] = A_V`` and the normal-form system ``A_V``."""

    F: GaugeElement
    V: BlockMatrix
    residual: float

    def V_block(self, i: int, j: int) -> SeriesMatrix:
        return self.V.U(i, j)


def _processing_order(shape: BlockShape, order):
    pairs = shape.pairs()
    if order is None:
        return pairs
    if callable(order):
        # permutation applied inside each level j - i
        out = []
        for g in range(1, shape.k):
            level = [p for p in pairs if p[1] - p[0] == g]
            out.extend(order(level))
        return out
    raise ValidationError("order must be None or a callable permuting a level")


def _induction(A: BlockMatrix, solver, order=None):
    ctx, shape = A.ctx, A.shape
    F: dict = {}
    V: dict = {}
    for i, j in _processing_order(shape, order):
        Ueff = A.U(i, j)
        for l in range(i + 1, j):
            Ueff = Ueff + F[(i, l)].sigma(1) @ A.U(l, j) - V[(i, l)] @ F[(l, j)]
        Fij, Vij = solver(shape.slopes[i], shape.constants[i], shape.slopes[j],
                          shape.constants[j], Ueff)
        F[(i, j)], V[(i, j)] = Fij, Vij
    Fg = GaugeElement(ctx, shape, F)
    AV = BlockMatrix(ctx, shape, V)
    return NormalFormResult(Fg, AV, gauge_residual(Fg, A, AV))


def birkhoff_guenther(A: BlockMatrix, order=None) -> NormalFormResult:
    """Polynomial normal form ``A_V`` with a convergent gauge ``F[A_U] = A_V``.

    Blocks are reduced by increasing ``j - i`` with
    ``(F_ij, V_ij) = Red(mu_i, A_i, mu_j, A_j,
    U_ij + sum (sigma F_il) U_lj - sum V_il F_lj)``.  ``order`` may permute
    the blocks of one level; the result does not depend on it.
    """
    return _induction(A, red_pair, order)


def check_germ(f, rtol: float | None = None, label: str = "series"):
    """Raise :class:`NotAGerm` unless both edges of ``f`` are negligible."""
    rtol = f.ctx.tol if rtol is None else rtol
    mags = f.abs_coeffs()
    top = mags.max() if mags.size else 0.0
    if top == 0:
        return
    k = max(1, mags.size // 10)
    if f.tail_lo and mags[:k].max() > rtol * top:
        raise NotAGerm(f"{label}: lower tail does not decay at the window edge")
    if f.tail_hi and mags[-k:].max() > rtol * top:
        raise NotAGerm(f"{label}: upper tail does not decay at the window edge")


def _scalar_tail_solver(mu, A, mu2, A2, U):
    f, v = tail_sum_pair(mu, complex(A[0, 0]), mu2, complex(A2[0, 0]), U.entry(0, 0))
    return f.as_matrix(), v.as_matrix()


def ocstar_normalize(A: BlockMatrix, engine: str = "auto") -> NormalFormResult:
    """Normal form for blocks given as two-sided windows convergent on ``C*``.

    Every block must decay at both window edges.  ``engine`` is
    ``"tailsum"`` (scalar blocks only), ``"recurrence"`` or ``"auto"``.
    """
    for (i, j), blk in A.blocks.items():
        check_germ(blk, label=f"U[{i},{j}]")
    scalar = all(r == 1 for r in A.shape.ranks)
    if engine == "auto":
        engine = "tailsum" if scalar else "recurrence"
    if engine == "tailsum":
        if not scalar:
            raise ValidationError("the tail-sum engine handles scalar blocks only")
        res = _induction(A, _scalar_tail_solver)
    elif engine == "recurrence":
        res = _induction(A, red_pair)
    else:
        raise ValidationError(f"unknown engine {engine!r}")
    for blk in res.F.blocks.values():
        check_germ(blk, label="F")
    return res
