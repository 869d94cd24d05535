"""Problem and certificate files (JSON, ``"format": 1``) plus CSV tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .laurent import QContext, SeriesMatrix
from .system import BlockMatrix, BlockShape
from .theta import SummationDivisor

FORMAT = 1
_KEY = re.compile(r"^\((\d+),\s*(\d+)\)$")


def _cpair(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def _cplx(p, what="value") -> complex:
    if isinstance(p, dict):
        p = [p.get("re", 0.0), p.get("im", 0.0)]
    if not (isinstance(p, (list, tuple)) and len(p) == 2):
        raise ValidationError(f"{what}: expected a [re, im] pair")
    try:
        z = complex(float(p[0]), float(p[1]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{what}: {exc}") from None
    if not np.isfinite(z):
        raise ValidationError(f"{what}: non-finite value")
    return z


def matrix_to_json(M) -> list:
    """Row-major list of ``[re, im]`` pairs."""
    return [_cpair(x) for x in np.asarray(M, dtype=complex).ravel()]


def matrix_from_json(data, rows: int, cols: int, what="matrix") -> np.ndarray:
    if not isinstance(data, list) or len(data) != rows * cols:
        raise ValidationError(f"{what}: expected {rows * cols} entries")
    return np.array([_cplx(p, what) for p in data], dtype=complex).reshape(rows, cols)


def series_to_json(S: SeriesMatrix) -> dict:
    S = S.to_complex()
    return {"lo": S.lo, "hi": S.hi,
            "coeffs": [matrix_to_json(S.c[:, :, n]) for n in range(S.c.shape[2])]}


def series_from_json(ctx: QContext, data: dict, rows: int, cols: int, what="block") -> SeriesMatrix:
    try:
        lo, hi, coeffs = int(data["lo"]), int(data["hi"]), data["coeffs"]
    except (KeyError, TypeError, ValueError):
        raise ValidationError(f"{what}: needs integer lo, hi and a coeffs list") from None
    if hi < lo or len(coeffs) != hi - lo + 1:
        raise ValidationError(f"{what}: coeffs must cover lo..hi")
    if hi - lo > 4 * ctx.N + 1:
        raise ValidationError(f"{what}: window {lo}..{hi} exceeds the working window")
    c = np.stack([matrix_from_json(m, rows, cols, what) for m in coeffs], axis=-1)
    return SeriesMatrix(ctx, lo, c)


def blocks_to_json(A: BlockMatrix) -> dict:
    return {f"({i},{j})": series_to_json(b) for (i, j), b in sorted(A.blocks.items())}


def blocks_from_json(ctx, shape: BlockShape, data: dict, what="blocks") -> BlockMatrix:
    if not isinstance(data, dict):
        raise ValidationError(f"{what}: expected a map")
    blocks = {}
    for key, val in data.items():
        m = _KEY.match(key.strip())
        if m is None:
            raise ValidationError(f"{what}: bad key {key!r}, expected '(i,j)'")
        i, j = int(m.group(1)), int(m.group(2))
        if not 0 <= i < j < shape.k:
            raise ValidationError(f"{what}: block {key} is not strictly upper")
        blocks[(i, j)] = series_from_json(ctx, val, shape.ranks[i], shape.ranks[j],
                                          f"{what}[{key}]")
    return BlockMatrix(ctx, shape, blocks)


def divisor_to_json(D: SummationDivisor) -> list:
    out = []
    for a in D.points:
        if out and complex(out[-1]["re"], out[-1]["im"]) == a:
            out[-1]["mult"] += 1
        else:
            out.append({"re": a.real, "im": a.imag, "mult": 1})
    return out


def divisor_from_json(slopes, q, data) -> SummationDivisor:
    if not isinstance(data, list):
        raise ValidationError("divisor: expected a list of points")
    pts = []
    for p in data:
        mult = int(p.get("mult", 1)) if isinstance(p, dict) else 1
        if mult < 1:
            raise ValidationError("divisor: multiplicities must be positive")
        pts.extend([_cplx(p, "divisor point")] * mult)
    return SummationDivisor(slopes, q, tuple(pts))


@dataclass(eq=False)
class ProblemFile:
    """A system ``A_U``, optionally a second system and summation divisors."""

    system: BlockMatrix
    target: BlockMatrix | None = None
    divisors: list = field(default_factory=list)
    seed: int | None = None

    @property
    def ctx(self) -> QContext:
        return self.system.ctx

    @property
    def shape(self) -> BlockShape:
        return self.system.shape

    def to_json(self) -> dict:
        sh = self.shape
        out = {"format": FORMAT, "q": {"re": self.ctx.q.real, "im": self.ctx.q.imag},
               "window": self.ctx.N, "tol": self.ctx.tol,
               "shape": {"slopes": list(sh.slopes), "ranks": list(sh.ranks),
                         "constants": [matrix_to_json(A) for A in sh.constants]},
               "blocks": blocks_to_json(self.system)}
        if self.target is not None:
            out["target"] = blocks_to_json(self.target)
        if self.divisors:
            out["divisors"] = [divisor_to_json(D) for D in self.divisors]
        if self.seed is not None:
            out["seed"] = int(self.seed)
        return out

    @classmethod
    def from_json(cls, data: dict, *, q=None, window=None, tol=None) -> "ProblemFile":
        """Validate and build; ``q``, ``window``, ``tol`` override the file."""
        if not isinstance(data, dict):
            raise ValidationError("problem file must be a JSON object")
        if data.get("format") != FORMAT:
            raise ValidationError(f"unsupported format {data.get('format')!r}, expected {FORMAT}")
        try:
            qv = _cplx(data["q"], "q") if q is None else complex(q)
            ctx = QContext(qv, int(data.get("window", 40)) if window is None else window,
                           float(data.get("tol", 1e-10)) if tol is None else tol)
            sd = data["shape"]
            slopes, ranks = sd["slopes"], sd["ranks"]
            if len(ranks) != len(slopes) or len(sd["constants"]) != len(slopes):
                raise ValidationError("shape: slopes, ranks and constants differ in length")
            consts = [matrix_from_json(c, int(r), int(r), f"A_{i}")
                      for i, (c, r) in enumerate(zip(sd["constants"], ranks))]
        except KeyError as exc:
            raise ValidationError(f"problem file lacks {exc}") from None
        shape = BlockShape(tuple(slopes), tuple(consts))
        A = blocks_from_json(ctx, shape, data.get("blocks", {}))
        B = blocks_from_json(ctx, shape, data["target"], "target") if "target" in data else None
        divs = [divisor_from_json(shape.slopes, ctx.q, d) for d in data.get("divisors", [])]
        seed = data.get("seed")
        return cls(A, B, divs, None if seed is None else int(seed))


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def atomic_write(path: str, text: str):
    """Write via a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_problem(path: str, **overrides) -> ProblemFile:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror}") from None
    return ProblemFile.from_json(data, **overrides)


def save_problem(p: ProblemFile, path: str):
    atomic_write(path, dumps(p.to_json()))


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------

def _plain(x):
    """JSON-safe copy (complex as [re, im], numpy scalars unwrapped)."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (complex, np.complexfloating)):
        return _cpair(x)
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    return x


@dataclass
class Certificate:
    command: str
    inputs_digest: str
    checks: list = field(default_factory=list)
    grid: dict | None = None
    verdicts: dict = field(default_factory=dict)
    wall_time: float = 0.0
    seed: int | None = None

    def check(self, name: str, value: float, tol: float, passed: bool | None = None) -> bool:
        ok = bool(value <= tol) if passed is None else bool(passed)
        self.checks.append({"name": name, "value": float(value), "tol": float(tol), "pass": ok})
        return ok

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks)

    def to_json(self) -> dict:
        return _plain({"format": FORMAT, "command": self.command,
                       "inputs_digest": self.inputs_digest, "seed": self.seed,
                       "residuals": self.checks, "grid": self.grid,
                       "verdicts": self.verdicts, "wall_time": self.wall_time,
                       "pass": self.passed})

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "tol", "pass"])
        for c in self.checks:
            w.writerow([c["name"], f"{c['value']:.6e}", f"{c['tol']:.3e}", int(c["pass"])])
        return buf.getvalue()

    def write(self, stem: str):
        """``stem.json`` and ``stem.csv``."""
        atomic_write(stem + ".json", dumps(self.to_json()))
        atomic_write(stem + ".csv", self.csv())


def write_table(path: str, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.12g}" if isinstance(x, float) else x for x in r])
    atomic_write(path, buf.getvalue())
