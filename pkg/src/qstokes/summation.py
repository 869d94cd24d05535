"""Algebraic summation along a divisor.

Given ``A_U`` and ``A_V`` on the same graded model and an allowed
summation divisor ``D``, the canonical meromorphic gauge ``F_D(U, V)`` is
computed in three steps:

1. flatten both systems with ``Theta_D = diag(t_i)``: the diagonal blocks
   become constants ``alpha_i A_i`` and ``U'_ij = t_ij U_ij`` with
   ``t_ij = alpha_i z^mu_i prod theta_{-a_l}`` entire on ``C*``;
2. link the flat systems by ``F'`` solving a regular (non-resonant)
   homological equation coefficient by coefficient;
3. conjugate back: ``F_ij = (t_j / t_i) F'_ij``.

``F`` is never expanded as a single Laurent series (its poles lie on
q-spirals); :class:`SummedGauge` keeps the factored form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CertificationFailure, InternalInconsistency, NearResonantIndex,
                     NotAllowedDivisor, PoleProximity, ValidationError)
from .laurent import QContext, SeriesMatrix, qpowers
from .system import BlockMatrix, BlockShape, GaugeElement, spectra
from .theta import SummationDivisor, ThetaGauge, eq_distance, is_allowed

COND_LIMIT = 1e10
POLE_RTOL = 1e-6
GRID_EXCLUSION = 2e-2
CERT_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FlatSystem:
    """``A'_{U'}``: constant diagonal blocks ``alpha_i A_i`` and entire blocks ``U'_ij``."""

    ctx: QContext
    constants: tuple
    blocks: dict = field(default_factory=dict)
    spectral_gap: float = math.inf

    @property
    def k(self):
        return len(self.constants)

    @property
    def ranks(self):
        return tuple(c.shape[0] for c in self.constants)

    def U(self, i, j) -> SeriesMatrix:
        blk = self.blocks.get((i, j))
        if blk is None:
            return SeriesMatrix.zeros(self.ctx, self.ranks[i], self.ranks[j])
        return blk

    def evaluate(self, z) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(self.ranks)]).astype(int)
        out = np.zeros((off[-1], off[-1]), dtype=complex)
        for i, c in enumerate(self.constants):
            out[off[i]:off[i + 1], off[i]:off[i + 1]] = c
        for (i, j), b in self.blocks.items():
            out[off[i]:off[i + 1], off[j]:off[j + 1]] = b.evaluate(z)
        return out


def _spectral_gap(constants, q) -> float:
    """Least ``E_q`` distance between eigenvalues of distinct blocks."""
    eigs = [np.linalg.eigvals(c) for c in constants]
    best = math.inf
    for i in range(len(eigs)):
        for j in range(i + 1, len(eigs)):
            for s in eigs[i]:
                for t in eigs[j]:
                    best = min(best, eq_distance(s, t, q))
    return best


def flatten(A: BlockMatrix, D: SummationDivisor, *, check_gap: bool = True) -> FlatSystem:
    """``Theta_D[A_U]``: diagonal ``alpha_i A_i``, off-diagonal ``t_ij U_ij``.

    With ``check_gap`` the pairwise spectra of the ``alpha_i A_i`` must be
    disjoint modulo ``q^Z``; this is what allowedness of ``D`` buys, so a
    failure here is an internal inconsistency.
    """
    shape = A.shape
    if tuple(D.slopes) != shape.slopes:
        raise ValidationError("divisor slopes do not match the system")
    ctx = A.ctx
    tg = ThetaGauge(D)
    consts = tuple(tg.alpha(i) * shape.constants[i] for i in range(shape.k))
    blocks = {}
    for (i, j), U in A.blocks.items():
        if U.max_abs() == 0:
            continue
        blocks[(i, j)] = U * tg.t_pair_series(ctx, i, j)
    gap = _spectral_gap(consts, ctx.q)
    if check_gap and gap < ctx.tol:
        raise InternalInconsistency(
            f"flattened spectra meet modulo q^Z (distance {gap:.2e}) for an allowed divisor")
    return FlatSystem(ctx, consts, blocks, gap)


def solve_regular(B, C, Y: SeriesMatrix, *, cond_limit: float = COND_LIMIT) -> SeriesMatrix:
    """Solve ``(sigma_q X) B - C X = Y`` coefficientwise.

    Degree ``n`` reads ``X_n (q^n B) - C X_n = Y_n``, a Sylvester system
    solved densely through its Kronecker matrix
    ``q^n (B^T (x) I) - I (x) C`` (column-major vectorization).
    """
    B = np.atleast_2d(np.asarray(B, dtype=complex))
    C = np.atleast_2d(np.asarray(C, dtype=complex))
    if Y.extended:
        Y = Y.to_complex()
    r, s = C.shape[0], B.shape[0]
    if Y.shape != (r, s):
        raise ValidationError(f"right-hand side has shape {Y.shape}, expected {(r, s)}")
    L = Y.c.shape[-1]
    qn = qpowers(Y.ctx.q, Y.lo, Y.hi)
    K1 = np.kron(B.T, np.eye(r))
    K2 = np.kron(np.eye(s), C)
    M = qn[:, None, None] * K1[None] - K2[None]
    cond = np.linalg.cond(M)
    bad = np.nonzero(~(cond <= cond_limit))[0]
    if bad.size:
        n = int(Y.lo + bad[0])
        raise NearResonantIndex(f"near-resonant index n={n} (condition {cond[bad[0]]:.2e})",
                                index=n, condition=float(cond[bad[0]]))
    # vec (column-major) of each Y_n
    rhs = Y.c.transpose(2, 1, 0).reshape(L, r * s)
    X = np.linalg.solve(M, rhs[:, :, None])[:, :, 0]
    Xc = X.reshape(L, s, r).transpose(2, 1, 0)
    return SeriesMatrix(Y.ctx, Y.lo, Xc, exact=Y.exact_window,
                        tails=(Y.tail_lo, Y.tail_hi), lossy=Y.lossy)


def link_regular(src: FlatSystem, dst: FlatSystem) -> GaugeElement:
    """``F'`` in the unipotent group with ``F'[A'_{U'}] = A'_{V'}``.

    By increasing ``j - i``:
    ``(sigma F'_ij) A'_j - A'_i F'_ij = V'_ij - U'_ij
    + sum_{i<l<j} (V'_il F'_lj - (sigma F'_il) U'_lj)``.
    """
    k = src.k
    for a, b in zip(src.constants, dst.constants):
        if a.shape != b.shape or not np.allclose(a, b, rtol=1e-12, atol=0):
            raise ValidationError("flat systems must share their diagonal constants")
    F: dict = {}
    for g in range(1, k):
        for i in range(k - g):
            j = i + g
            Y = dst.U(i, j) - src.U(i, j)
            for l in range(i + 1, j):
                Y = Y + dst.U(i, l) @ F[(l, j)] - F[(i, l)].sigma(1) @ src.U(l, j)
            if Y.max_abs() == 0:
                F[(i, j)] = SeriesMatrix.zeros(src.ctx, *Y.shape)
                continue
            F[(i, j)] = solve_regular(src.constants[j], src.constants[i], Y)
    shape = BlockShape(tuple(range(k - 1, -1, -1)), src.constants)
    return GaugeElement(src.ctx, shape, F)


# ---------------------------------------------------------------------------
# Sample grids
# ---------------------------------------------------------------------------

def sample_grid(q: complex, n_radii: int = 20, n_args: int = 3, seed: int = 0,
                avoid=(), exclusion: float = GRID_EXCLUSION):
    """Points ``r e^{i phi}`` with ``r`` log-uniform on ``[1, |q|)``.

    Each radius gets ``n_args`` seeded arguments.  A point whose image or
    ``q``-image is within relative distance ``exclusion`` of a point in
    ``avoid`` is rotated by a fixed step until it is clear.
    """
    rng = np.random.default_rng(seed)
    aq = abs(q)
    q = complex(q)
    avoid = [complex(a) for a in avoid]
    pts = []
    for k in range(n_radii):
        r = aq ** ((k + 0.5) / n_radii)
        for phi in rng.uniform(0, 2 * math.pi, n_args):
            for step in range(64):
                z = r * complex(math.cos(phi), math.sin(phi))
                if all(abs(w - a) > exclusion * abs(a) for a in avoid for w in (z, q * z)):
                    break
                phi += 0.61803398875
            pts.append(z)
    return np.array(pts)


def grid_spec(n_radii=20, n_args=3, seed=0, exclusion=GRID_EXCLUSION) -> dict:
    return {"radii": n_radii, "arguments": n_args, "seed": seed, "exclusion": exclusion,
            "annulus": "[1, |q|)"}


# ---------------------------------------------------------------------------
# Summed gauges
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SummedGauge:
    """``F = Theta_D^-1 F' Theta_D``, stored as ``(F', Theta_D)``."""

    divisor: SummationDivisor
    theta: ThetaGauge
    flat: GaugeElement
    shape: BlockShape
    source: BlockMatrix | None = None
    target: BlockMatrix | None = None
    certificate: dict = field(default_factory=dict)

    def flat_block(self, i: int, j: int) -> SeriesMatrix:
        return self.flat.F(i, j)

    def poles(self, mmin: int = -3, mmax: int = 4):
        return self.divisor.lifted_support(mmin, mmax)

    def check_pole_distance(self, z: complex, rtol: float = POLE_RTOL):
        z = complex(z)
        q = self.divisor.q
        for a in self.divisor.points:
            # nearest lift of a to z
            m = round(math.log(abs(z / a)) / math.log(abs(q)))
            for mm in (m - 1, m, m + 1):
                p = a * q ** mm
                if abs(z - p) < rtol * abs(p):
                    raise PoleProximity(f"z={z:.6g} is within {rtol:g} of the pole {p:.6g}")

    def block(self, i: int, j: int, z: complex) -> np.ndarray:
        """``F_ij(z) = (t_j(z)/t_i(z)) F'_ij(z)``."""
        if i == j:
            return np.eye(self.shape.ranks[i], dtype=complex)
        if i > j:
            return np.zeros((self.shape.ranks[i], self.shape.ranks[j]), dtype=complex)
        Fp = self.flat.F(i, j).evaluate(z)
        return self.theta.ratio(j, i, z) * Fp

    def evaluate(self, z: complex, *, check: bool = True) -> np.ndarray:
        if complex(z) == 0:
            raise ValidationError("evaluation point must be nonzero")
        if check:
            self.check_pole_distance(z)
        off = self.shape.offsets
        n = self.shape.n
        out = np.eye(n, dtype=complex)
        for (i, j) in self.shape.pairs():
            out[off[i]:off[i + 1], off[j]:off[j + 1]] = self.block(i, j, z)
        return out

    def check_pole_distance_many(self, zs, rtol: float = POLE_RTOL):
        zs = np.asarray(zs, dtype=complex).ravel()
        q = self.divisor.q
        lq = math.log(abs(q))
        for a in self.divisor.points:
            m = np.round(np.log(np.abs(zs / a)) / lq)
            for dm in (-1, 0, 1):
                p = a * np.power(complex(q), m + dm)
                hit = np.abs(zs - p) < rtol * np.abs(p)
                if hit.any():
                    t = int(np.argmax(hit))
                    raise PoleProximity(
                        f"z={zs[t]:.6g} is within {rtol:g} of the pole {p[t]:.6g}")

    def evaluate_many(self, zs, *, check: bool = True) -> np.ndarray:
        """Values at all points, shape ``(P, n, n)``."""
        zs = np.asarray(zs, dtype=complex).ravel()
        if np.any(zs == 0):
            raise ValidationError("evaluation point must be nonzero")
        if check:
            self.check_pole_distance_many(zs)
        off = self.shape.offsets
        out = np.broadcast_to(np.eye(self.shape.n, dtype=complex),
                              (zs.size, self.shape.n, self.shape.n)).copy()
        for (i, j) in self.shape.pairs():
            Fp = self.flat.F(i, j).evaluate_many(zs).transpose(2, 0, 1)
            r = self.theta.ratio_many(j, i, zs)
            out[:, off[i]:off[i + 1], off[j]:off[j + 1]] = r[:, None, None] * Fp
        return out

    def residual_many(self, zs, A_U: BlockMatrix | None = None,
                      A_V: BlockMatrix | None = None) -> np.ndarray:
        """Vectorized :meth:`residual`."""
        A_U = self.source if A_U is None else A_U
        A_V = self.target if A_V is None else A_V
        zs = np.asarray(zs, dtype=complex).ravel()
        AU, AV = A_U.evaluate_many(zs), A_V.evaluate_many(zs)
        diff = self.evaluate_many(self.divisor.q * zs) @ AU - AV @ self.evaluate_many(zs)
        return np.linalg.norm(diff, axis=(1, 2)) / np.linalg.norm(AU, axis=(1, 2))

    def residual(self, z: complex, A_U: BlockMatrix | None = None,
                 A_V: BlockMatrix | None = None) -> float:
        """``|F(qz) A_U(z) - A_V(z) F(z)| / |A_U(z)|`` (Frobenius norms)."""
        A_U = self.source if A_U is None else A_U
        A_V = self.target if A_V is None else A_V
        q = self.divisor.q
        AU, AV = A_U.evaluate(z), A_V.evaluate(z)
        lhs = self.evaluate(q * z) @ AU
        rhs = AV @ self.evaluate(z)
        return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(AU))


def eval_gauge(G: SummedGauge, z: complex) -> np.ndarray:
    return G.evaluate(z)


def check_allowed(A: BlockMatrix, D: SummationDivisor, margin=None):
    sp = spectra(A.shape)
    kw = {} if margin is None else {"margin": margin}
    res = is_allowed(D, sp, **kw)
    if not res:
        i, j, s, t = res.witness
        raise NotAllowedDivisor(
            f"divisor not allowed: ev(D_({i},{j})) meets the class of "
            f"(-1)^mu s/t with s={s:.6g}, t={t:.6g}", witness=res.witness)
    return res


def sum_gauge(A_U: BlockMatrix, A_V: BlockMatrix, D: SummationDivisor, *,
              certify: bool = True, cert_tol: float = CERT_TOL, grid=None,
              seed: int = 0) -> SummedGauge:
    """The canonical gauge ``F_D(U, V)`` with ``F[A_U] = A_V`` and
    ``div(F_ij) >= -D_ij``.

    With ``certify`` the defining relation is checked at the sample grid;
    the worst relative residual is stored in ``certificate``.
    """
    if not A_U.shape.same_as(A_V.shape):
        raise ValidationError("source and target shapes differ")
    if A_U.ctx != A_V.ctx:
        raise ValidationError("source and target use different contexts")
    allowed = check_allowed(A_U, D)
    src = flatten(A_U, D)
    dst = flatten(A_V, D)
    Fp = link_regular(src, dst)
    Fp = GaugeElement(A_U.ctx, A_U.shape, dict(Fp.blocks))
    G = SummedGauge(D, ThetaGauge(D), Fp, A_U.shape, A_U, A_V)
    cert = {"allowed_distance": allowed.min_distance, "spectral_gap": src.spectral_gap}
    if certify:
        pts = sample_grid(D.q, seed=seed, avoid=D.lifted_support()) if grid is None else grid
        res = G.residual_many(pts)
        worst = int(np.argmax(res))
        cert.update(max_residual=float(res[worst]), worst_point=complex(pts[worst]),
                    n_points=len(pts), tol=cert_tol)
        if not res[worst] <= cert_tol:
            raise CertificationFailure(
                f"gauge residual {res[worst]:.3e} exceeds {cert_tol:g} at z={pts[worst]:.6g}",
                report=cert)
    G.certificate.update(cert)
    return G


def gauge_from_zero(A_U: BlockMatrix, D: SummationDivisor, **kw) -> SummedGauge:
    """``F_D(U) = F_D(0, U)``: the summed gauge with ``F[A_0] = A_U``."""
    return sum_gauge(BlockMatrix(A_U.ctx, A_U.shape, {}), A_U, D, **kw)


def compose_values(F: np.ndarray, G: np.ndarray) -> np.ndarray:
    return F @ G
