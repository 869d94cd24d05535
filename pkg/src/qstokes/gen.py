"""Seeded random instances and divisor selection."""

from __future__ import annotations

import cmath
import math

import numpy as np

from .errors import BorderlineDivisor, DomainRefusal, ValidationError
from .laurent import QContext, SeriesMatrix
from .system import BlockMatrix, BlockShape, GaugeElement, gauge_action, spectra
from .theta import SummationDivisor, is_allowed


def random_constants(rng: np.random.Generator, rank: int, q: complex) -> np.ndarray:
    """A well conditioned ``rank x rank`` matrix with eigenvalues in ``1 <= |x| < |q|``."""
    aq = abs(q)
    ev = aq ** rng.uniform(0.1, 0.9, rank) * np.exp(2j * math.pi * rng.uniform(0, 1, rank))
    if rank == 1:
        return ev.reshape(1, 1)
    P = np.eye(rank) + 0.3 * (rng.standard_normal((rank, rank))
                              + 1j * rng.standard_normal((rank, rank)))
    return P @ np.diag(ev) @ np.linalg.inv(P)


def random_shape(rng, slopes, ranks=None, q: complex = 2.0) -> BlockShape:
    ranks = [1] * len(slopes) if ranks is None else list(ranks)
    if len(ranks) != len(slopes):
        raise ValidationError("one rank per slope is required")
    return BlockShape(tuple(slopes), tuple(random_constants(rng, r, q) for r in ranks))


def random_block(ctx: QContext, rng, rows: int, cols: int, lo: int = 0, hi: int = 6,
                 decay: float = 0.5) -> SeriesMatrix:
    """Coefficients ``c_n ~ decay**|n|`` times complex Gaussians on ``[lo, hi]``."""
    L = hi - lo + 1
    c = rng.standard_normal((rows, cols, L)) + 1j * rng.standard_normal((rows, cols, L))
    c *= decay ** np.abs(np.arange(lo, hi + 1))
    return SeriesMatrix(ctx, lo, c)


def random_system(ctx: QContext, rng, shape: BlockShape, lo: int = 0, hi: int = 6,
                  decay: float = 0.5) -> BlockMatrix:
    blocks = {(i, j): random_block(ctx, rng, shape.ranks[i], shape.ranks[j], lo, hi, decay)
              for (i, j) in shape.pairs()}
    return BlockMatrix(ctx, shape, blocks)


def random_gauge(ctx: QContext, rng, shape: BlockShape, lo: int = 0, hi: int = 4,
                 decay: float = 0.5) -> GaugeElement:
    """A unipotent gauge with polynomial blocks."""
    blocks = {(i, j): random_block(ctx, rng, shape.ranks[i], shape.ranks[j], lo, hi, decay)
              for (i, j) in shape.pairs()}
    return GaugeElement(ctx, shape, blocks)


def planted_pair(A: BlockMatrix, G: GaugeElement) -> BlockMatrix:
    """``G[A]``, analytically equivalent to ``A`` by construction."""
    return gauge_action(G, A)


def pick_divisor(A: BlockMatrix, rng=None, tries: int = 200,
                 margin: float = 1e-2) -> SummationDivisor:
    """Random chosen points ``a_l`` on the unit-to-``|q|`` annulus, allowed for ``A``."""
    rng = np.random.default_rng(0) if rng is None else rng
    q = A.ctx.q
    sp = spectra(A.shape)
    npts = A.shape.slopes[0] - A.shape.slopes[-1]
    for _ in range(tries):
        pts = abs(q) ** rng.uniform(0.05, 0.95, npts) * np.exp(2j * math.pi * rng.uniform(0, 1, npts))
        D = SummationDivisor(A.shape.slopes, q, tuple(pts))
        try:
            if is_allowed(D, sp, margin=margin):
                return D
        except BorderlineDivisor:
            continue
    raise DomainRefusal(f"no allowed divisor found in {tries} draws")


def shifted_points(D: SummationDivisor, m: int) -> SummationDivisor:
    """Same divisor classes, representatives ``a_l q**m``."""
    return SummationDivisor(D.slopes, D.q, tuple(a * D.q ** m for a in D.points))


def gen_instance(seed: int, slopes=(1, 0), ranks=None, q: complex = 2.0, N: int = 40,
                 tol: float = 1e-10, degree: int = 6, decay: float = 0.5,
                 planted: bool = False, n_divisors: int = 0):
    """Reproducible ``(A_U, A_V or None, divisors)`` for a seed and shape."""
    rng = np.random.default_rng(seed)
    ctx = QContext(q, N, tol)
    shape = random_shape(rng, slopes, ranks, q)
    A = random_system(ctx, rng, shape, 0, degree, decay)
    B = planted_pair(A, random_gauge(ctx, rng, shape, 0, max(1, degree // 2), decay)) \
        if planted else None
    divs = [pick_divisor(A, rng) for _ in range(n_divisors)]
    return A, B, divs


def unit_phase(z: complex) -> complex:
    return cmath.exp(1j * cmath.phase(z))
