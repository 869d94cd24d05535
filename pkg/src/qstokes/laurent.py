"""Complex Laurent series truncated to finite coefficient windows.

A series stores the coefficients of ``z**lo .. z**hi``.  Two pieces of
bookkeeping travel with it:

* ``elo, ehi`` -- the exactness window: coefficients in it are fully
  determined by the data the series was built from.
* ``tail_lo, tail_hi`` -- whether the represented function has
  non-negligible coefficients beyond the stored window.

Windows never grow past ``[-N, N]``; anything beyond is clipped, the
``lossy`` flag is raised and the clipped side gets a tail.

Coefficients are ``complex128`` by default.  Divergent formal series
(q-Gevrey growth like ``q**(n*n/2)``) leave the float64 exponent range
quickly, so a series may also hold ``mpmath.mpc`` objects at 53-bit
precision ("extended" series): same mantissa, unbounded exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Number

import mpmath
import numpy as np

from .errors import EvaluationOverflow, SingularBlock, ValidationError


@dataclass(frozen=True)
class QContext:
    """The base ``q`` (``|q| > 1``), the window half-width and tolerance."""

    q: complex
    N: int = 40
    tol: float = 1e-10

    def __post_init__(self):
        q = complex(self.q)
        object.__setattr__(self, "q", q)
        if not math.isfinite(q.real) or not math.isfinite(q.imag):
            raise ValidationError("q must be finite")
        if not abs(q) > 1 + 1e-6:
            raise ValidationError(f"|q| must exceed 1 (got |q| = {abs(q):.6g})")
        if int(self.N) != self.N or self.N < 4:
            raise ValidationError(f"window half-width N must be an integer >= 4 (got {self.N})")
        object.__setattr__(self, "N", int(self.N))
        if not self.tol > 0:
            raise ValidationError("tol must be positive")

    @property
    def logq(self) -> float:
        return math.log(abs(self.q))

    def with_window(self, N: int) -> "QContext":
        return QContext(self.q, N, self.tol)


def is_extended(a: np.ndarray) -> bool:
    return a.dtype == object


def to_extended(a: np.ndarray) -> np.ndarray:
    if is_extended(a):
        return a
    out = np.empty(a.shape, dtype=object)
    flat = a.ravel()
    oflat = out.ravel()
    for k, x in enumerate(flat):
        oflat[k] = mpmath.mpc(complex(x))
    return out


def to_complex(a: np.ndarray) -> np.ndarray:
    if not is_extended(a):
        return a
    return np.array([complex(x) for x in a.ravel()], dtype=complex).reshape(a.shape)


def _promote(a, b):
    if is_extended(a) or is_extended(b):
        return to_extended(a), to_extended(b)
    return a, b


def qpowers(q, lo: int, hi: int, extended: bool = False) -> np.ndarray:
    """``q**n`` for ``n = lo..hi`` by cumulative products outward from 0.

    Repeated multiplication keeps the relative error at a few ulps per
    step, which the exact coefficient identities rely on.
    """
    if hi < lo:
        return np.zeros(0, dtype=object if extended else complex)
    if extended:
        qq = mpmath.mpc(q)
        one = mpmath.mpc(1)
        out = np.empty(hi - lo + 1, dtype=object)
    else:
        qq = complex(q)
        one = 1.0 + 0j
        out = np.empty(hi - lo + 1, dtype=complex)
    pos = one
    for n in range(0, hi + 1):
        if n >= lo:
            out[n - lo] = pos
        pos = pos * qq
    neg = one
    inv = one / qq
    for n in range(0, lo - 1, -1):
        if n <= hi:
            out[n - lo] = neg
        neg = neg * inv
    return out


def power_table(zs: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """``zs[p]**n`` for ``n = lo..hi`` (shape ``(P, hi-lo+1)``), built outward from 1."""
    zs = np.asarray(zs, dtype=complex).ravel()
    out = np.empty((zs.size, hi - lo + 1), dtype=complex)
    if hi >= max(lo, 0):
        a = max(lo, 0)
        pos = np.cumprod(np.broadcast_to(zs[:, None], (zs.size, hi)), axis=1) if hi > 0 \
            else np.ones((zs.size, 0), dtype=complex)
        pos = np.concatenate([np.ones((zs.size, 1), dtype=complex), pos], axis=1)
        out[:, a - lo:] = pos[:, a:hi + 1]
    if lo < 0:
        b = min(hi, -1)
        neg = np.cumprod(np.broadcast_to(1.0 / zs[:, None], (zs.size, -lo)), axis=1)
        # neg[:, k] = z**-(k+1)
        for n in range(lo, b + 1):
            out[:, n - lo] = neg[:, -n - 1]
    return out


def gaussian_weights(q, lo: int, hi: int, level: int = 1, extended: bool = False) -> np.ndarray:
    """``q**(-level*n*(n-1)/2)`` for ``n = lo..hi``, built by recurrence."""
    if hi < lo:
        return np.zeros(0, dtype=object if extended else complex)
    base = mpmath.mpc(q) ** level if extended else complex(q) ** level
    one = mpmath.mpc(1) if extended else 1.0 + 0j
    out = np.empty(hi - lo + 1, dtype=object if extended else complex)
    # w_n = w_{n-1} * base**-(n-1); w_0 = w_1 = 1
    w = one
    for n in range(0, hi + 1):
        if n >= 1:
            w = w / base ** (n - 1)
        if n >= lo:
            out[n - lo] = w
    w = one
    for n in range(-1, lo - 1, -1):
        w = w / base ** (-n)
        if n <= hi:
            out[n - lo] = w
    return out


class _Windowed:
    """Shared window/exactness logic; the last array axis indexes degrees."""

    __slots__ = ("ctx", "lo", "c", "elo", "ehi", "tail_lo", "tail_hi", "lossy")
    # make numpy defer ``ndarray @ series`` to our reflected operators
    __array_ufunc__ = None

    def __init__(self, ctx: QContext, lo: int, coeffs, *, exact=None,
                 tails=(False, False), lossy=False, clip=True):
        c = np.asarray(coeffs)
        if c.dtype != object:
            c = c.astype(complex)
        if c.shape[-1] == 0:
            c = np.zeros(c.shape[:-1] + (1,), dtype=c.dtype)
            exact = (lo, lo)
        self.ctx = ctx
        self.lo = int(lo)
        self.c = c
        hi = self.lo + c.shape[-1] - 1
        if exact is None:
            exact = (self.lo, hi)
        self.elo, self.ehi = int(exact[0]), int(exact[1])
        self.tail_lo, self.tail_hi = bool(tails[0]), bool(tails[1])
        self.lossy = bool(lossy)
        if not is_extended(c) and not np.all(np.isfinite(c)):
            raise ValidationError("series coefficients must be finite")
        if clip:
            self._clip_to(-ctx.N, ctx.N)

    # -- construction helpers -------------------------------------------
    def _new(self, lo, coeffs, *, exact=None, tails=None, lossy=None, clip=True):
        return type(self)(self.ctx, lo, coeffs, exact=exact,
                          tails=(self.tail_lo, self.tail_hi) if tails is None else tails,
                          lossy=self.lossy if lossy is None else lossy, clip=clip)

    def _clip_to(self, a: int, b: int):
        hi = self.hi
        if self.lo >= a and hi <= b:
            return
        na, nb = max(self.lo, a), min(hi, b)
        if nb < na:
            # Entire window fell outside: keep a single zero coefficient.
            na = nb = min(max(0, a), b)
            self.c = np.zeros(self.c.shape[:-1] + (1,), dtype=self.c.dtype)
            self.lo = na
            self.elo, self.ehi = na + 1, na  # empty
            self.tail_lo = self.tail_hi = True
            self.lossy = True
            return
        dropped_lo = na > self.lo and self._any_nonzero(self.lo, na - 1)
        dropped_hi = nb < hi and self._any_nonzero(nb + 1, hi)
        self.c = self.c[..., na - self.lo: nb - self.lo + 1]
        self.lo = na
        self.elo, self.ehi = max(self.elo, na), min(self.ehi, nb)
        if dropped_lo:
            self.tail_lo = True
            self.lossy = True
        if dropped_hi:
            self.tail_hi = True
            self.lossy = True

    def _any_nonzero(self, a, b):
        seg = self.c[..., a - self.lo: b - self.lo + 1]
        return any(x != 0 for x in seg.ravel())

    # -- basic properties -------------------------------------------------
    @property
    def hi(self) -> int:
        return self.lo + self.c.shape[-1] - 1

    @property
    def window(self):
        return (self.lo, self.hi)

    @property
    def exact_window(self):
        return (self.elo, self.ehi)

    @property
    def extended(self) -> bool:
        return is_extended(self.c)

    @property
    def inexact_above(self) -> bool:
        return self.tail_hi or self.ehi < self.hi

    @property
    def inexact_below(self) -> bool:
        return self.tail_lo or self.elo > self.lo

    def padded(self, lo: int, hi: int) -> np.ndarray:
        """Coefficient array on ``[lo, hi]``, zero outside the window."""
        out = np.zeros(self.c.shape[:-1] + (hi - lo + 1,), dtype=self.c.dtype)
        if self.extended:
            out[...] = mpmath.mpc(0)
        a, b = max(lo, self.lo), min(hi, self.hi)
        if a <= b:
            out[..., a - lo: b - lo + 1] = self.c[..., a - self.lo: b - self.lo + 1]
        return out

    def coefficient(self, n: int):
        if self.lo <= n <= self.hi:
            return self.c[..., n - self.lo]
        return self.padded(n, n)[..., 0]

    def max_abs(self) -> float:
        if self.extended:
            return float(max((abs(x) for x in self.c.ravel()), default=0))
        return float(np.max(np.abs(self.c))) if self.c.size else 0.0

    def abs_coeffs(self) -> np.ndarray:
        """Coefficient magnitudes, reduced over matrix entries (max)."""
        if self.extended:
            a = np.vectorize(lambda x: float(abs(x)), otypes=[float])(self.c)
        else:
            a = np.abs(self.c)
        while a.ndim > 1:
            a = a.max(axis=0)
        return a

    def log_abs_coeffs(self) -> np.ndarray:
        if self.extended:
            f = np.vectorize(lambda x: float(mpmath.log(abs(x))) if x != 0 else -np.inf,
                             otypes=[float])
            a = f(self.c)
        else:
            with np.errstate(divide="ignore"):
                a = np.log(np.abs(self.c))
        while a.ndim > 1:
            a = a.max(axis=0)
        return a

    def to_extended(self):
        return self._new(self.lo, to_extended(self.c), exact=self.exact_window, clip=False)

    def to_complex(self):
        return self._new(self.lo, to_complex(self.c), exact=self.exact_window, clip=False)

    def trimmed(self, rtol: float = 0.0):
        """Drop leading/trailing coefficients at most ``rtol * max``."""
        mags = self.abs_coeffs()
        thr = rtol * (mags.max() if mags.size else 0.0)
        nz = np.nonzero(mags > thr)[0]
        if nz.size == 0:
            return self._new(0, np.zeros(self.c.shape[:-1] + (1,), dtype=self.c.dtype),
                             exact=(0, 0), clip=False)
        a, b = int(nz[0]), int(nz[-1])
        lo, hi = self.lo + a, self.lo + b
        exact = (max(self.elo, lo) if self.elo > self.lo else lo,
                 min(self.ehi, hi) if self.ehi < self.hi else hi)
        return self._new(lo, self.c[..., a:b + 1], exact=exact, clip=False)

    def restrict(self, lo: int, hi: int):
        """Keep coefficients of degrees ``lo..hi`` (a truncation)."""
        lo2, hi2 = max(lo, self.lo), min(hi, self.hi)
        if hi2 < lo2:
            return self._new(lo, np.zeros(self.c.shape[:-1] + (1,), dtype=self.c.dtype),
                             exact=(lo, lo), tails=(False, False), clip=False)
        return self._new(lo2, self.c[..., lo2 - self.lo: hi2 - self.lo + 1],
                         exact=(max(self.elo, lo2), min(self.ehi, hi2)), clip=False)

    def with_tails(self, tail_lo: bool, tail_hi: bool):
        return self._new(self.lo, self.c, exact=self.exact_window, tails=(tail_lo, tail_hi),
                         clip=False)

    def mark_tails_by_decay(self, rtol: float | None = None):
        """Flag a tail on each side whose edge coefficient is not negligible."""
        rtol = self.ctx.tol * 1e-3 if rtol is None else rtol
        mags = self.abs_coeffs()
        top = mags.max() if mags.size else 0.0
        if top == 0:
            return self.with_tails(False, False)
        return self.with_tails(bool(mags[0] > rtol * top), bool(mags[-1] > rtol * top))

    # -- arithmetic helpers -------------------------------------------------
    def _sum_meta(self, other, lo, hi):
        e_hi = hi
        e_lo = lo
        for s in (self, other):
            if s.inexact_above:
                e_hi = min(e_hi, s.ehi)
            if s.inexact_below:
                e_lo = max(e_lo, s.elo)
        tails = (self.tail_lo or other.tail_lo, self.tail_hi or other.tail_hi)
        return (e_lo, e_hi), tails, self.lossy or other.lossy

    def _add(self, other, sign=1):
        self._check_ctx(other)
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        a, b = _promote(self.padded(lo, hi), other.padded(lo, hi))
        exact, tails, lossy = self._sum_meta(other, lo, hi)
        return self._new(lo, a + b if sign > 0 else a - b, exact=exact, tails=tails,
                         lossy=lossy)

    def _prod_meta(self, other, lo, hi):
        e_lo, e_hi = lo, hi
        if self.inexact_above:
            e_hi = min(e_hi, self.ehi + other.lo)
        if other.inexact_above:
            e_hi = min(e_hi, other.ehi + self.lo)
        if self.inexact_below:
            e_lo = max(e_lo, self.elo + other.hi)
        if other.inexact_below:
            e_lo = max(e_lo, other.elo + self.hi)
        tails = (self.tail_lo or other.tail_lo, self.tail_hi or other.tail_hi)
        return (e_lo, e_hi), tails, self.lossy or other.lossy

    def _check_ctx(self, other):
        if other.ctx != self.ctx:
            raise ValidationError("series built over different QContexts")

    def sigma(self, m: int = 1):
        """``f(q**m z)``: coefficient ``n`` is multiplied by ``q**(m*n)``."""
        if m == 0:
            return self
        ext = self.extended
        base = (mpmath.mpc(self.ctx.q) ** m) if ext else complex(self.ctx.q) ** m
        w = qpowers(base, self.lo, self.hi, extended=ext)
        return self._new(self.lo, self.c * w, exact=self.exact_window, clip=False)

    def shift(self, k: int):
        """Multiply by ``z**k``."""
        return self._new(self.lo + k, self.c, exact=(self.elo + k, self.ehi + k))

    def scale(self, s):
        c = self.c
        if self.extended:
            s = mpmath.mpc(complex(s)) if not isinstance(s, mpmath.mpc) else s
        return self._new(self.lo, c * s, exact=self.exact_window, clip=False)

    def __neg__(self):
        return self.scale(-1)

    # -- evaluation -------------------------------------------------------
    def evaluate(self, z):
        """``sum_n c_n z**n`` over the window.

        Powers are formed outward from ``z**0`` by repeated multiplication
        (positive side) and division (negative side), then contracted with
        the coefficients.
        """
        z = complex(z)
        if z == 0:
            raise ValidationError("evaluation point must be nonzero")
        if self.extended:
            return self._evaluate_extended(z)
        c = self.c
        with np.errstate(over="ignore", invalid="ignore"):
            pw = qpowers(z, self.lo, self.hi)
            val = c @ pw
        if not np.all(np.isfinite(val)):
            lz = math.log(abs(z))
            with np.errstate(divide="ignore"):
                mags = self.log_abs_coeffs() + lz * np.arange(self.lo, self.hi + 1)
            idx = int(self.lo + np.argmax(mags))
            raise EvaluationOverflow(f"evaluation overflow at z={z:.6g} (index {idx})", index=idx)
        return val if val.ndim else complex(val)

    def evaluate_many(self, zs) -> np.ndarray:
        """Values at every point of ``zs``; the point axis comes last."""
        zs = np.asarray(zs, dtype=complex).ravel()
        if np.any(zs == 0):
            raise ValidationError("evaluation points must be nonzero")
        if self.extended:
            return np.stack([np.asarray(self.evaluate(z), dtype=complex) for z in zs], axis=-1)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            pw = power_table(zs, self.lo, self.hi)
            val = self.c @ pw.T
        if not np.all(np.isfinite(val)):
            bad = int(np.nonzero(~np.isfinite(val.reshape(-1, zs.size)).all(axis=0))[0][0])
            self.evaluate(zs[bad])  # raises with the offending index
            raise EvaluationOverflow(f"evaluation overflow at z={zs[bad]:.6g}")
        return val

    def _evaluate_extended(self, z):
        zz = mpmath.mpc(z)
        out = np.empty(self.c.shape[:-1], dtype=object)
        for idx in np.ndindex(*self.c.shape[:-1]):
            s = mpmath.mpc(0)
            for n in range(self.lo, self.hi + 1):
                s += self.c[idx + (n - self.lo,)] * zz ** n
            out[idx] = s
        return out if out.ndim else out[()]


class WindowedLaurent(_Windowed):
    """A single truncated Laurent series ``sum_{n=lo}^{hi} c_n z**n``."""

    __slots__ = ()

    def __init__(self, ctx, lo, coeffs, **kw):
        super().__init__(ctx, lo, np.atleast_1d(np.asarray(coeffs, dtype=None)), **kw)
        if self.c.ndim != 1:
            raise ValidationError("WindowedLaurent needs a 1-d coefficient array")

    @classmethod
    def monomial(cls, ctx, n: int, c=1.0):
        return cls(ctx, n, [c])

    @classmethod
    def constant(cls, ctx, c):
        return cls(ctx, 0, [c])

    @classmethod
    def zero(cls, ctx):
        return cls(ctx, 0, [0.0])

    @classmethod
    def from_dict(cls, ctx, d: dict):
        if not d:
            return cls.zero(ctx)
        lo, hi = min(d), max(d)
        c = np.zeros(hi - lo + 1, dtype=complex)
        for k, v in d.items():
            c[k - lo] = v
        return cls(ctx, lo, c)

    def __repr__(self):
        flags = " lossy" if self.lossy else ""
        return f"WindowedLaurent(lo={self.lo}, hi={self.hi}{flags}, coeffs={self.c!r})"

    def _coerce(self, other):
        if isinstance(other, WindowedLaurent):
            return other
        if isinstance(other, Number) or isinstance(other, mpmath.mpc):
            return WindowedLaurent.constant(self.ctx, complex(other))
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return self._add(o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return self._add(o, sign=-1)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        return o._add(self, sign=-1)

    def __mul__(self, other):
        if isinstance(other, Number) or isinstance(other, mpmath.mpc):
            return self.scale(other)
        if isinstance(other, SeriesMatrix):
            return other.__mul__(self)
        if not isinstance(other, WindowedLaurent):
            return NotImplemented
        self._check_ctx(other)
        a, b = _promote(self.c, other.c)
        prod = np.convolve(a, b)
        lo = self.lo + other.lo
        exact, tails, lossy = self._prod_meta(other, lo, lo + prod.shape[-1] - 1)
        return WindowedLaurent(self.ctx, lo, prod, exact=exact, tails=tails, lossy=lossy)

    __rmul__ = __mul__

    def valuation(self, tol: float | None = None):
        """Least ``n`` with ``|c_n| > tol * max|c|``; ``math.inf`` if none."""
        tol = self.ctx.tol if tol is None else tol
        mags = self.abs_coeffs()
        top = mags.max() if mags.size else 0.0
        if top == 0:
            return math.inf
        nz = np.nonzero(mags > tol * top)[0]
        return int(self.lo + nz[0]) if nz.size else math.inf

    def allclose(self, other, rtol: float = 1e-10, atol: float = 0.0) -> bool:
        o = self._coerce(other)
        lo, hi = min(self.lo, o.lo), max(self.hi, o.hi)
        a, b = self.padded(lo, hi), o.padded(lo, hi)
        if self.extended or o.extended:
            a, b = to_extended(a), to_extended(b)
            scale = max(max(abs(x) for x in a), max(abs(x) for x in b))
            return all(abs(x - y) <= atol + rtol * scale for x, y in zip(a, b))
        scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
        return bool(np.all(np.abs(a - b) <= atol + rtol * scale))

    def as_matrix(self):
        return SeriesMatrix(self.ctx, self.lo, self.c[None, None, :], exact=self.exact_window,
                            tails=(self.tail_lo, self.tail_hi), lossy=self.lossy, clip=False)


def _matconv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix-valued convolution: ``out[:, :, n] = sum_s a[:, :, s] @ b[:, :, n-s]``."""
    a, b = _promote(a, b)
    r, k, la = a.shape
    k2, cc, lb = b.shape
    if k != k2:
        raise ValidationError(f"inner dimensions differ ({k} vs {k2})")
    out = np.zeros((r, cc, la + lb - 1), dtype=a.dtype)
    if a.dtype == object:
        out[...] = mpmath.mpc(0)
        bt = b.transpose(2, 0, 1)
        for s in range(la):
            out[:, :, s:s + lb] += np.matmul(a[:, :, s], bt).transpose(1, 2, 0)
        return out
    if la <= lb:
        bt = b.transpose(2, 0, 1)
        for s in range(la):
            if np.any(a[:, :, s]):
                out[:, :, s:s + lb] += np.matmul(a[:, :, s], bt).transpose(1, 2, 0)
    else:
        at = a.transpose(2, 0, 1)
        for t in range(lb):
            if np.any(b[:, :, t]):
                out[:, :, t:t + la] += np.matmul(at, b[:, :, t]).transpose(1, 2, 0)
    return out


class SeriesMatrix(_Windowed):
    """A matrix of truncated Laurent series sharing one coefficient window.

    ``c`` has shape ``(rows, cols, hi - lo + 1)``.
    """

    __slots__ = ()

    def __init__(self, ctx, lo, coeffs, **kw):
        super().__init__(ctx, lo, coeffs, **kw)
        if self.c.ndim != 3:
            raise ValidationError("SeriesMatrix needs a 3-d coefficient array")

    def __repr__(self):
        return f"SeriesMatrix({self.rows}x{self.cols}, lo={self.lo}, hi={self.hi})"

    @property
    def shape(self):
        return self.c.shape[:2]

    @property
    def rows(self):
        return self.c.shape[0]

    @property
    def cols(self):
        return self.c.shape[1]

    @classmethod
    def zeros(cls, ctx, rows, cols):
        return cls(ctx, 0, np.zeros((rows, cols, 1), dtype=complex))

    @classmethod
    def identity(cls, ctx, n):
        return cls(ctx, 0, np.eye(n, dtype=complex)[:, :, None])

    @classmethod
    def constant(cls, ctx, M, degree: int = 0):
        """``z**degree * M`` for a constant matrix ``M``."""
        M = np.atleast_2d(np.asarray(M, dtype=complex))
        return cls(ctx, degree, M[:, :, None])

    @classmethod
    def from_entries(cls, entries):
        """Build from a nested list of ``WindowedLaurent``."""
        flat = [e for row in entries for e in row]
        ctx = flat[0].ctx
        lo = min(e.lo for e in flat)
        hi = max(e.hi for e in flat)
        ext = any(e.extended for e in flat)
        rows, cols = len(entries), len(entries[0])
        c = np.zeros((rows, cols, hi - lo + 1), dtype=object if ext else complex)
        if ext:
            c[...] = mpmath.mpc(0)
        for i, row in enumerate(entries):
            for j, e in enumerate(row):
                p = e.padded(lo, hi)
                c[i, j] = to_extended(p) if ext else p
        elo, ehi = lo, hi
        for e in flat:
            if e.inexact_above:
                ehi = min(ehi, e.ehi)
            if e.inexact_below:
                elo = max(elo, e.elo)
        return cls(ctx, lo, c, exact=(elo, ehi),
                   tails=(any(e.tail_lo for e in flat), any(e.tail_hi for e in flat)),
                   lossy=any(e.lossy for e in flat))

    @classmethod
    def assemble(cls, ctx, grid):
        """Block assembly; ``grid[i][j]`` is a ``SeriesMatrix`` or ``None`` (zero)
        with row heights/col widths taken from the non-None entries."""
        nb = len(grid)
        heights = [None] * nb
        widths = [None] * len(grid[0])
        for i, row in enumerate(grid):
            for j, blk in enumerate(row):
                if blk is not None:
                    heights[i] = blk.rows
                    widths[j] = blk.cols
        if None in heights or None in widths:
            raise ValidationError("cannot infer block sizes")
        blocks = [b for row in grid for b in row if b is not None]
        lo = min(b.lo for b in blocks)
        hi = max(b.hi for b in blocks)
        ext = any(b.extended for b in blocks)
        n, m = sum(heights), sum(widths)
        c = np.zeros((n, m, hi - lo + 1), dtype=object if ext else complex)
        if ext:
            c[...] = mpmath.mpc(0)
        ro = np.concatenate([[0], np.cumsum(heights)])
        co = np.concatenate([[0], np.cumsum(widths)])
        elo, ehi = lo, hi
        for i, row in enumerate(grid):
            for j, blk in enumerate(row):
                if blk is None:
                    continue
                p = blk.padded(lo, hi)
                c[ro[i]:ro[i + 1], co[j]:co[j + 1]] = to_extended(p) if ext else p
                if blk.inexact_above:
                    ehi = min(ehi, blk.ehi)
                if blk.inexact_below:
                    elo = max(elo, blk.elo)
        return cls(ctx, lo, c, exact=(elo, ehi),
                   tails=(any(b.tail_lo for b in blocks), any(b.tail_hi for b in blocks)),
                   lossy=any(b.lossy for b in blocks))

    def entry(self, i, j) -> WindowedLaurent:
        return WindowedLaurent(self.ctx, self.lo, self.c[i, j], exact=self.exact_window,
                               tails=(self.tail_lo, self.tail_hi), lossy=self.lossy, clip=False)

    def block(self, r0, r1, c0, c1) -> "SeriesMatrix":
        return SeriesMatrix(self.ctx, self.lo, self.c[r0:r1, c0:c1], exact=self.exact_window,
                            tails=(self.tail_lo, self.tail_hi), lossy=self.lossy, clip=False)

    def transpose(self):
        return self._new(self.lo, self.c.transpose(1, 0, 2), exact=self.exact_window, clip=False)

    def _coerce(self, other):
        if isinstance(other, SeriesMatrix):
            return other
        if isinstance(other, WindowedLaurent) and self.shape == (1, 1):
            return other.as_matrix()
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        if o.shape != self.shape:
            raise ValidationError(f"shape mismatch {self.shape} vs {o.shape}")
        return self._add(o)

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return o
        if o.shape != self.shape:
            raise ValidationError(f"shape mismatch {self.shape} vs {o.shape}")
        return self._add(o, sign=-1)

    def __matmul__(self, other):
        if isinstance(other, np.ndarray):
            M = np.atleast_2d(other)
            c = self.c
            if self.extended:
                M = to_extended(M.astype(complex))
            out = np.einsum("ikn,kj->ijn", c, M) if c.dtype != object else \
                np.matmul(c.transpose(2, 0, 1), M).transpose(1, 2, 0)
            return self._new(self.lo, out, exact=self.exact_window, clip=False)
        if not isinstance(other, SeriesMatrix):
            return NotImplemented
        self._check_ctx(other)
        prod = _matconv(self.c, other.c)
        lo = self.lo + other.lo
        exact, tails, lossy = self._prod_meta(other, lo, lo + prod.shape[-1] - 1)
        return SeriesMatrix(self.ctx, lo, prod, exact=exact, tails=tails, lossy=lossy)

    def __rmatmul__(self, other):
        if isinstance(other, np.ndarray):
            M = np.atleast_2d(other)
            c = self.c
            if self.extended:
                M = to_extended(M.astype(complex))
                out = np.matmul(M, c.transpose(2, 0, 1)).transpose(1, 2, 0)
            else:
                out = np.einsum("ik,kjn->ijn", M, c)
            return self._new(self.lo, out, exact=self.exact_window, clip=False)
        return NotImplemented

    def __mul__(self, other):
        """Scalar or scalar-series multiplication (entrywise by the same factor)."""
        if isinstance(other, Number) or isinstance(other, mpmath.mpc):
            return self.scale(other)
        if isinstance(other, WindowedLaurent):
            self._check_ctx(other)
            a, b = _promote(self.c, other.c)
            r, cc, la = a.shape
            lb = b.shape[-1]
            out = np.zeros((r, cc, la + lb - 1), dtype=a.dtype)
            if a.dtype == object:
                out[...] = mpmath.mpc(0)
            for t in range(lb):
                if b[t] != 0:
                    out[:, :, t:t + la] += b[t] * a
            lo = self.lo + other.lo
            exact, tails, lossy = self._prod_meta(other, lo, lo + out.shape[-1] - 1)
            return SeriesMatrix(self.ctx, lo, out, exact=exact, tails=tails, lossy=lossy)
        return NotImplemented

    __rmul__ = __mul__

    def evaluate(self, z) -> np.ndarray:
        return np.asarray(super().evaluate(z))

    def allclose(self, other, rtol: float = 1e-10, atol: float = 0.0) -> bool:
        lo, hi = min(self.lo, other.lo), max(self.hi, other.hi)
        a, b = self.padded(lo, hi), other.padded(lo, hi)
        if self.extended or other.extended:
            a, b = to_extended(a), to_extended(b)
            d = max((abs(x - y) for x, y in zip(a.ravel(), b.ravel())), default=0)
            scale = max(max(abs(x) for x in a.ravel()), max(abs(x) for x in b.ravel()))
            return bool(d <= atol + rtol * scale)
        scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
        return bool(np.all(np.abs(a - b) <= atol + rtol * scale))

    def residual_norm(self, relative_to: "SeriesMatrix | None" = None, exact_only=True) -> float:
        """Max coefficient magnitude on the exactness window, optionally
        divided by the max magnitude of ``relative_to``."""
        lo, hi = (self.elo, self.ehi) if exact_only else (self.lo, self.hi)
        lo, hi = max(lo, self.lo), min(hi, self.hi)
        if hi < lo:
            return 0.0
        seg = self.c[..., lo - self.lo: hi - self.lo + 1]
        val = float(max((abs(x) for x in seg.ravel()), default=0.0)) if self.extended \
            else float(np.max(np.abs(seg))) if seg.size else 0.0
        if relative_to is not None:
            ref = relative_to.max_abs()
            return val / ref if ref else val
        return val


def monomial_constant_blocks(M: SeriesMatrix, sizes, tol: float):
    """Read the diagonal blocks of ``M`` as ``z**e * A`` (single monomials)."""
    offs = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for i in range(len(sizes)):
        blk = M.block(offs[i], offs[i + 1], offs[i], offs[i + 1])
        mags = blk.abs_coeffs()
        top = mags.max()
        if top == 0:
            raise SingularBlock(f"diagonal block {i} is zero")
        nz = np.nonzero(mags > tol * top)[0]
        if nz.size != 1:
            raise ValidationError(f"diagonal block {i} is not of the form z^e * A")
        e = int(blk.lo + nz[0])
        A = to_complex(blk.c[:, :, nz[0]])
        out.append((e, A))
    return out


def block_triangular_inverse(M: SeriesMatrix, sizes, tol: float | None = None) -> SeriesMatrix:
    """Inverse of a block-upper-triangular matrix with diagonal blocks
    ``z**e_i * A_i`` (``A_i`` constant invertible), by back-substitution."""
    ctx = M.ctx
    tol = ctx.tol if tol is None else tol
    diag = monomial_constant_blocks(M, sizes, tol)
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    k = len(sizes)
    inv_diag = []
    for i, (e, A) in enumerate(diag):
        scale = max(1.0, np.max(np.abs(A))) ** A.shape[0]
        if abs(np.linalg.det(A)) < tol * scale:
            raise SingularBlock(f"singular diagonal block {i}")
        inv_diag.append(SeriesMatrix.constant(ctx, np.linalg.inv(A), degree=-e))
    X = [[None] * k for _ in range(k)]
    for i in range(k):
        X[i][i] = inv_diag[i]
    for j in range(k):
        for i in range(j - 1, -1, -1):
            acc = None
            for l in range(i + 1, j + 1):
                Mil = M.block(offs[i], offs[i + 1], offs[l], offs[l + 1])
                term = Mil @ X[l][j]
                acc = term if acc is None else acc + term
            X[i][j] = -(inv_diag[i] @ acc)
    for i in range(k):
        for j in range(i):
            X[i][j] = SeriesMatrix.zeros(ctx, sizes[i], sizes[j])
    return SeriesMatrix.assemble(ctx, X)


def unipotent_inverse(F: SeriesMatrix) -> SeriesMatrix:
    """Inverse of ``I + N`` with ``N`` nilpotent (strictly upper triangular)."""
    n = F.rows
    eye = SeriesMatrix.identity(F.ctx, n)
    N = F - eye
    out = eye
    power = eye
    for _ in range(n - 1):
        power = -(power @ N)
        out = out + power
    return out

