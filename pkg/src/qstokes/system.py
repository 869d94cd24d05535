"""Block-structured q-difference systems in canonical form.

A system is ``sigma_q X = A X`` with ``A = A_U`` block upper triangular::

    A_U = [[z^-mu_1 A_1,  U_12, ...      ],
           [0,      z^-mu_2 A_2, ...     ],
           ...                            ]

with integer slopes ``mu_1 > ... > mu_k`` and constant invertible ``A_i``.
Blocks are indexed from 0 throughout the library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergence, SingularBlock, ValidationError
from .laurent import (QContext, SeriesMatrix, WindowedLaurent, block_triangular_inverse,
                      unipotent_inverse)


@dataclass(frozen=True, eq=False)
class BlockShape:
    """Slopes, ranks and diagonal constants of the graded system ``A_0``."""

    slopes: tuple
    constants: tuple

    def __post_init__(self):
        slopes = tuple(int(s) for s in self.slopes)
        consts = tuple(np.atleast_2d(np.asarray(A, dtype=complex)) for A in self.constants)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "constants", consts)
        if len(slopes) == 0 or len(slopes) != len(consts):
            raise ValidationError("one constant matrix per slope is required")
        if any(slopes[i] <= slopes[i + 1] for i in range(len(slopes) - 1)):
            raise ValidationError(f"slopes must be strictly decreasing, got {slopes}")
        for i, A in enumerate(consts):
            if A.shape[0] != A.shape[1]:
                raise ValidationError(f"A_{i} is not square")
            if not np.all(np.isfinite(A)):
                raise ValidationError(f"A_{i} has non-finite entries")
            scale = max(1.0, float(np.max(np.abs(A)))) ** A.shape[0]
            if abs(np.linalg.det(A)) <= 1e-10 * scale:
                raise ValidationError(f"A_{i} is not invertible")

    @classmethod
    def scalar(cls, slopes, values=None) -> "BlockShape":
        values = [1.0] * len(slopes) if values is None else values
        return cls(tuple(slopes), tuple(np.array([[v]], dtype=complex) for v in values))

    @property
    def k(self) -> int:
        return len(self.slopes)

    @property
    def ranks(self) -> tuple:
        return tuple(A.shape[0] for A in self.constants)

    @property
    def n(self) -> int:
        return sum(self.ranks)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.ranks)]).astype(int)

    @property
    def pair_list(self):
        return self.pairs()

    def gap(self, i: int, j: int) -> int:
        return self.slopes[i] - self.slopes[j]

    def pairs(self):
        """Off-diagonal block indices ``(i, j)``, ordered by ``j - i``."""
        return [(i, i + g) for g in range(1, self.k) for i in range(self.k - g)]

    def diagonal(self, ctx: QContext, i: int) -> SeriesMatrix:
        return SeriesMatrix.constant(ctx, self.constants[i], degree=-self.slopes[i])

    def same_as(self, other: "BlockShape", tol: float = 1e-12) -> bool:
        return (self.slopes == other.slopes and self.ranks == other.ranks
                and all(np.allclose(A, B, atol=tol, rtol=0)
                        for A, B in zip(self.constants, other.constants)))

    def evaluate_diagonal(self, i: int, z: complex) -> np.ndarray:
        return complex(z) ** (-self.slopes[i]) * self.constants[i]


def _zero_block(ctx, shape, i, j):
    return SeriesMatrix.zeros(ctx, shape.ranks[i], shape.ranks[j])


@dataclass(frozen=True, eq=False)
class BlockMatrix:
    """``A_U``: a shape plus strictly upper blocks ``U[(i, j)]`` (missing = 0)."""

    ctx: QContext
    shape: BlockShape
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (i, j), blk in self.blocks.items():
            if not 0 <= i < j < self.shape.k:
                raise ValidationError(f"block ({i},{j}) is not strictly upper")
            if isinstance(blk, WindowedLaurent):
                blk = blk.as_matrix()
            if blk.shape != (self.shape.ranks[i], self.shape.ranks[j]):
                raise ValidationError(
                    f"block ({i},{j}) has shape {blk.shape}, expected "
                    f"{(self.shape.ranks[i], self.shape.ranks[j])}")
            clean[(i, j)] = blk
        object.__setattr__(self, "blocks", clean)

    def U(self, i: int, j: int) -> SeriesMatrix:
        blk = self.blocks.get((i, j))
        return blk if blk is not None else _zero_block(self.ctx, self.shape, i, j)

    def to_series(self) -> SeriesMatrix:
        k = self.shape.k
        grid = [[None] * k for _ in range(k)]
        for i in range(k):
            for j in range(k):
                if i == j:
                    grid[i][j] = self.shape.diagonal(self.ctx, i)
                elif i < j:
                    grid[i][j] = self.U(i, j)
                else:
                    grid[i][j] = _zero_block(self.ctx, self.shape, i, j)
        return SeriesMatrix.assemble(self.ctx, grid)

    @classmethod
    def from_series(cls, ctx, shape: BlockShape, M: SeriesMatrix, check_diagonal=True):
        off = shape.offsets
        if check_diagonal:
            for i in range(shape.k):
                D = M.block(off[i], off[i + 1], off[i], off[i + 1])
                if not D.allclose(shape.diagonal(ctx, i), rtol=1e-8):
                    raise ValidationError(f"diagonal block {i} does not match the shape")
        blocks = {(i, j): M.block(off[i], off[i + 1], off[j], off[j + 1])
                  for i, j in shape.pairs()}
        return cls(ctx, shape, blocks)

    def evaluate(self, z: complex) -> np.ndarray:
        n = self.shape.n
        off = self.shape.offsets
        out = np.zeros((n, n), dtype=complex)
        for i in range(self.shape.k):
            out[off[i]:off[i + 1], off[i]:off[i + 1]] = self.shape.evaluate_diagonal(i, z)
        for (i, j), blk in self.blocks.items():
            out[off[i]:off[i + 1], off[j]:off[j + 1]] = blk.evaluate(z)
        return out

    def evaluate_many(self, zs) -> np.ndarray:
        """Values at all points, shape ``(P, n, n)``."""
        zs = np.asarray(zs, dtype=complex).ravel()
        n = self.shape.n
        off = self.shape.offsets
        out = np.zeros((zs.size, n, n), dtype=complex)
        for i in range(self.shape.k):
            zp = zs ** (-self.shape.slopes[i])
            out[:, off[i]:off[i + 1], off[i]:off[i + 1]] = \
                zp[:, None, None] * self.shape.constants[i][None]
        for (i, j), blk in self.blocks.items():
            out[:, off[i]:off[i + 1], off[j]:off[j + 1]] = blk.evaluate_many(zs).transpose(2, 0, 1)
        return out

    def inverse(self) -> SeriesMatrix:
        return block_triangular_inverse(self.to_series(), self.shape.ranks)

    def is_graded(self, tol: float = 0.0) -> bool:
        return all(b.max_abs() <= tol for b in self.blocks.values())


def graded_part(A: BlockMatrix) -> BlockMatrix:
    """``A_0``: the same shape with every off-diagonal block zeroed."""
    return BlockMatrix(A.ctx, A.shape, {})


@dataclass(frozen=True, eq=False)
class GaugeElement:
    """Unipotent block upper triangular ``F`` (identity diagonal blocks)."""

    ctx: QContext
    shape: BlockShape
    blocks: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (i, j), blk in self.blocks.items():
            if not 0 <= i < j < self.shape.k:
                raise ValidationError(f"gauge block ({i},{j}) is not strictly upper")
            if isinstance(blk, WindowedLaurent):
                blk = blk.as_matrix()
            clean[(i, j)] = blk
        object.__setattr__(self, "blocks", clean)

    @classmethod
    def identity(cls, ctx, shape):
        return cls(ctx, shape, {})

    def F(self, i: int, j: int) -> SeriesMatrix:
        if i == j:
            return SeriesMatrix.identity(self.ctx, self.shape.ranks[i])
        blk = self.blocks.get((i, j))
        return blk if blk is not None else _zero_block(self.ctx, self.shape, i, j)

    def to_series(self) -> SeriesMatrix:
        k = self.shape.k
        grid = [[self.F(i, j) if i <= j else _zero_block(self.ctx, self.shape, i, j)
                 for j in range(k)] for i in range(k)]
        return SeriesMatrix.assemble(self.ctx, grid)

    @classmethod
    def from_series(cls, ctx, shape, M: SeriesMatrix):
        off = shape.offsets
        return cls(ctx, shape, {(i, j): M.block(off[i], off[i + 1], off[j], off[j + 1])
                                for i, j in shape.pairs()})

    def __matmul__(self, other: "GaugeElement") -> "GaugeElement":
        return GaugeElement.from_series(self.ctx, self.shape, self.to_series() @ other.to_series())

    def inverse(self) -> "GaugeElement":
        return GaugeElement.from_series(self.ctx, self.shape, unipotent_inverse(self.to_series()))

    def evaluate(self, z: complex) -> np.ndarray:
        return self.to_series().evaluate(z)

    def max_offdiag(self) -> float:
        return max((b.max_abs() for b in self.blocks.values()), default=0.0)


def _is_unipotent_upper(F: SeriesMatrix, tol: float) -> bool:
    n = F.rows
    eye = SeriesMatrix.identity(F.ctx, n)
    D = F - eye
    c = D.padded(D.lo, D.hi)
    mags = np.abs(c) if c.dtype != object else np.vectorize(lambda x: float(abs(x)))(c)
    lower = np.tril(np.ones((n, n), dtype=bool))
    return bool(np.all(mags[lower] <= tol))


def gauge_action(F, A):
    """``F[A] = (sigma_q F) A F^{-1}``.

    ``F`` is a ``GaugeElement`` or a unipotent upper triangular
    ``SeriesMatrix``; ``A`` a ``BlockMatrix`` or ``SeriesMatrix``.  Returns
    the same kind of object as ``A``.
    """
    as_block = isinstance(A, BlockMatrix)
    Aser = A.to_series() if as_block else A
    Fser = F.to_series() if isinstance(F, GaugeElement) else F
    if Fser.shape != Aser.shape:
        raise ValidationError("gauge and system dimensions differ")
    if not _is_unipotent_upper(Fser, Fser.ctx.tol):
        raise SingularBlock("gauge is not unipotent upper triangular")
    out = Fser.sigma(1) @ Aser @ unipotent_inverse(Fser)
    if as_block:
        return BlockMatrix.from_series(A.ctx, A.shape, out, check_diagonal=False)
    return out


def gauge_residual(F, A_src: BlockMatrix, A_dst: BlockMatrix) -> float:
    """Relative size of ``(sigma_q F) A_src - A_dst F`` on its exactness window."""
    Fser = F.to_series() if isinstance(F, GaugeElement) else F
    lhs = Fser.sigma(1) @ A_src.to_series()
    rhs = A_dst.to_series() @ Fser
    diff = lhs - rhs
    ref = max(lhs.max_abs(), rhs.max_abs(), 1e-300)
    return diff.residual_norm() / ref


def spectra(shape: BlockShape, tol: float = 1e-8):
    """Eigenvalues (with multiplicity) of every diagonal constant ``A_i``.

    Each eigenvalue is certified by the relative size of the characteristic
    polynomial at it.
    """
    out = []
    for i, A in enumerate(shape.constants):
        ev = np.linalg.eigvals(A)
        poly = np.poly(A)
        scale = np.max(np.abs(A)) or 1.0
        for lam in ev:
            terms = np.abs(poly) * np.abs(lam) ** np.arange(len(poly) - 1, -1, -1)
            res = abs(np.polyval(poly, lam)) / max(terms.max(), scale ** len(poly))
            if res > tol:
                raise NonConvergence(f"eigenvalue of A_{i} not certified (residual {res:.2e})")
        out.append([complex(x) for x in ev])
    return out


def newton_polygon(coeffs, tol: float | None = None):
    """Slopes of the Newton polygon of ``sum_i a_i sigma_q^i``.

    Lower convex hull of the points ``(i, v(a_i))``; each edge gives a
    slope ``dv/di`` with multiplicity its horizontal length.  With this
    convention ``z sigma_q - 1`` has slope 1, like the module
    ``(C({z}), z^-1 sigma_q)``.  Returned in descending order.
    """
    pts = []
    for i, a in enumerate(coeffs):
        v = a.valuation(tol) if isinstance(a, WindowedLaurent) else (
            math.inf if a == 0 else 0)
        if v != math.inf:
            pts.append((i, v))
    if not pts:
        raise ValidationError("all coefficients vanish")
    if pts[0][0] != 0 or pts[-1][0] != len(coeffs) - 1:
        raise ValidationError("first and last coefficients must be nonzero")
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            # drop the middle point unless it lies strictly below the chord
            if (y2 - y1) * (p[0] - x1) >= (p[1] - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append(p)
    edges = []
    for (x1, y1), (x2, y2) in zip(hull, hull[1:]):
        edges.append(((y2 - y1) / (x2 - x1), x2 - x1))
    merged: dict = {}
    for s, m in edges:
        s = int(s) if float(s).is_integer() else s
        merged[s] = merged.get(s, 0) + m
    return sorted(merged.items(), key=lambda t: -t[0])
