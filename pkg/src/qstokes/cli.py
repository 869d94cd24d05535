"""Command line: ``qstokes {normal-form,sum,cocycle,classify,gen,check}``.

Exit codes: 0 success, 2 invalid input, 3 refusal (divisor not allowed,
inconclusive classification), 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import io as qio
from .errors import CertificationFailure, QStokesError, ValidationError
from .gen import gen_instance, pick_divisor, shifted_points
from .normalform import birkhoff_guenther
from .stokes import build_cocycle, classify_pair, flatness_level
from .summation import gauge_from_zero, grid_spec, sample_grid, sum_gauge
from .system import BlockMatrix

log = logging.getLogger("qstokes")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _overrides(args) -> dict:
    out = {}
    if args.q_re is not None or args.q_im is not None:
        out["q"] = complex(args.q_re or 0.0, args.q_im or 0.0)
    if args.window is not None:
        out["window"] = args.window
    if args.tol is not None:
        out["tol"] = args.tol
    return out


def _load(args, path=None):
    path = path or args.problem
    p = qio.load_problem(path, **_overrides(args))
    with open(path) as fh:
        raw = json.load(fh)
    return p, raw


def _seed(args, p=None) -> int:
    if args.seed is not None:
        return args.seed
    return p.seed if p is not None and p.seed is not None else 0


def _stem(args, name: str) -> str:
    return os.path.join(args.output, name)


def _divisor(args, p, idx=None):
    idx = args.divisor if idx is None else idx
    if p.divisors and idx < len(p.divisors):
        return p.divisors[idx]
    if p.divisors:
        raise ValidationError(f"divisor index {idx} out of range ({len(p.divisors)} given)")
    return pick_divisor(p.system, np.random.default_rng(_seed(args, p) + idx))


def _target(args, p):
    if args.target:
        other = qio.load_problem(args.target, **_overrides(args))
        if not other.shape.same_as(p.shape):
            raise ValidationError("target file has a different shape")
        return BlockMatrix(p.ctx, p.shape, dict(other.system.blocks))
    return p.target


def _series_mags(S):
    mags = S.abs_coeffs()
    return mags.reshape(-1, mags.shape[-1]).max(axis=0) if mags.ndim > 1 else mags


def _window_diff(a, b) -> float:
    """Max coefficient difference of two series, possibly from different windows."""
    lo, hi = min(a.lo, b.lo), max(a.hi, b.hi)
    d = a.to_complex().padded(lo, hi) - b.to_complex().padded(lo, hi)
    return float(np.max(np.abs(d))) if d.size else 0.0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_normal_form(args) -> qio.Certificate:
    p, raw = _load(args)
    cert = qio.Certificate("normal-form", qio.digest(raw), seed=_seed(args, p))
    res = birkhoff_guenther(p.system)
    cert.check("gauge_residual", res.residual, max(p.ctx.tol, 1e-9))
    again = birkhoff_guenther(res.V)
    off = max((again.F.F(i, j).max_abs() for i, j in p.shape.pairs()), default=0.0)
    cert.check("idempotence", off, 1e-9)
    V = {f"({i},{j})": qio.series_to_json(res.V.U(i, j)) for i, j in p.shape.pairs()}
    cert.verdicts["V"] = V
    if p.shape.k == 2 and p.shape.ranks == (1, 1):
        v = res.V.U(0, 1)
        cert.verdicts["nu"] = complex(v.coefficient(v.lo)[0, 0]) if v.hi == v.lo else None
    qio.save_problem(qio.ProblemFile(res.V, seed=p.seed), _stem(args, "normal_form.json"))
    if args.figures:
        from .report import plot_coefficients
        ser = {}
        for i, j in p.shape.pairs():
            F = res.F.F(i, j)
            ser[f"F({i},{j})"] = (F.lo, _series_mags(F))
            U = p.system.U(i, j)
            ser[f"U({i},{j})"] = (U.lo, _series_mags(U))
        plot_coefficients(ser, _stem(args, "normal_form.png"), "normal-form gauge")
    return cert


def _gauge_table(G, pts, path):
    vals = G.evaluate_many(pts)
    res = G.residual_many(pts)
    n = vals.shape[1]
    ij = [(r, c) for r in range(n) for c in range(r + 1, n)]
    header = ["z_re", "z_im", "residual"] + [f"F{r}{c}_{s}" for r, c in ij for s in ("re", "im")]
    rows = []
    for z, F, e in zip(pts, vals, res):
        row = [z.real, z.imag, float(e)]
        for r, c in ij:
            row += [F[r, c].real, F[r, c].imag]
        rows.append(row)
    qio.write_table(path, header, rows)
    return res


def cmd_sum(args) -> qio.Certificate:
    p, raw = _load(args)
    seed = _seed(args, p)
    cert = qio.Certificate("sum", qio.digest(raw), seed=seed)
    D = _divisor(args, p)
    B = _target(args, p)
    try:
        G = gauge_from_zero(p.system, D, seed=seed) if B is None \
            else sum_gauge(p.system, B, D, seed=seed)
    except CertificationFailure as exc:
        cert.check("sample_residual", exc.report.get("max_residual", np.inf), 1e-7)
        raise
    pts = sample_grid(p.ctx.q, seed=seed, avoid=D.lifted_support())
    cert.grid = grid_spec(seed=seed)
    res = _gauge_table(G, pts, _stem(args, "gauge_table.csv"))
    cert.check("sample_residual", float(res.max()), 1e-7)
    cert.verdicts.update(divisor=qio.divisor_to_json(D),
                         allowed_distance=G.certificate["allowed_distance"],
                         source="A_0" if B is None else "file")
    if args.figures:
        from .report import plot_residuals
        plot_residuals(pts, res, _stem(args, "residuals.png"), 1e-7)
    return cert


def _flatness_rows(coc, z0, M=25):
    rows, rays = [], {}
    sh = coc.shape
    for i, j in sh.pairs():
        y = coc.ray_log_values(0, 1, i, j, z0, M)
        if not np.all(np.isfinite(y)):
            rows.append([i, j, sh.gap(i, j), "", "", "zero"])
            continue
        fit = flatness_level(y, coc.A.ctx.q, log=True)
        rel = abs(fit.level - sh.gap(i, j)) / sh.gap(i, j)
        rows.append([i, j, sh.gap(i, j), fit.level, rel, "ok" if rel <= 0.1 else "off"])
        rays[f"C({i},{j})"] = (np.arange(1, M + 1), y, fit)
    return rows, rays


def cmd_cocycle(args) -> qio.Certificate:
    p, raw = _load(args)
    seed = _seed(args, p)
    cert = qio.Certificate("cocycle", qio.digest(raw), seed=seed)
    m = max(2, args.m)
    divs = [_divisor(args, p, idx) for idx in range(m)] if not p.divisors \
        else p.divisors[:max(m, len(p.divisors))]
    coc = build_cocycle(p.system, divs, seed=seed)
    cert.grid = grid_spec(seed=seed)
    cert.check("cocycle_identity", coc.certificate["identity_residual"], 1e-8)
    cert.check("fixes_A0", coc.certificate["fixing_residual"], 1e-7)
    z0 = complex(sample_grid(p.ctx.q, 1, 1, seed=seed, avoid=coc.avoid())[0])
    rows, rays = _flatness_rows(coc, z0)
    qio.write_table(_stem(args, "flatness.csv"),
                    ["i", "j", "expected", "fitted", "rel_error", "status"], rows)
    for r in rows:
        if r[5] != "zero":
            cert.check(f"flatness_{r[0]}{r[1]}", r[4], 0.1)
    cert.verdicts["flatness"] = rows
    if args.figures:
        from .report import plot_flatness
        plot_flatness(rays, p.ctx.q, _stem(args, "flatness.png"))
    return cert


def cmd_classify(args) -> qio.Certificate:
    p, raw = _load(args)
    seed = _seed(args, p)
    B = _target(args, p)
    if B is None:
        raise ValidationError("classify needs a second system (--target or a 'target' entry)")
    raw_t = raw if not args.target else [raw, json.load(open(args.target))]
    cert = qio.Certificate("classify", qio.digest(raw_t), seed=seed)
    D = _divisor(args, p)
    v = classify_pair(p.system, B, D, seed=seed)
    cert.grid = grid_spec(seed=seed)
    cert.check("gauge_residual", v.residual, 1e-7)
    cert.verdicts.update(equivalent=v.equivalent,
                         verdict="equivalent" if v.equivalent else "not equivalent",
                         witness=None if v.witness is None else list(v.witness),
                         nu_check=v.nu_check, divisor=qio.divisor_to_json(D))
    return cert


def cmd_gen(args):
    slopes = tuple(int(s) for s in args.slopes.split(","))
    ranks = tuple(int(r) for r in args.ranks.split(",")) if args.ranks else None
    q = complex(args.q_re if args.q_re is not None else 2.0, args.q_im or 0.0)
    A, B, divs = gen_instance(args.seed or 0, slopes, ranks, q, args.window or 40,
                              args.tol or 1e-10, args.degree, args.decay,
                              planted=args.planted, n_divisors=args.divisors)
    p = qio.ProblemFile(A, B, divs, args.seed or 0)
    text = qio.dumps(p.to_json())
    if args.output == "-":
        sys.stdout.write(text)
    else:
        qio.atomic_write(args.output, text)
    return None


def cmd_check(args) -> qio.Certificate:
    p, raw = _load(args)
    seed = _seed(args, p)
    cert = qio.Certificate("check", qio.digest(raw), seed=seed)
    res = birkhoff_guenther(p.system)
    cert.check("normal_form_residual", res.residual, 1e-9)
    again = birkhoff_guenther(res.V)
    cert.check("normal_form_idempotence",
               max((again.F.F(i, j).max_abs() for i, j in p.shape.pairs()), default=0.0), 1e-9)
    p2 = qio.ProblemFile.from_json(raw, **{**_overrides(args), "window": 2 * p.ctx.N})
    res2 = birkhoff_guenther(p2.system)
    dv = max((_window_diff(res.V.U(i, j), res2.V.U(i, j)) for i, j in p.shape.pairs()),
             default=0.0)
    cert.check("normal_form_N_vs_2N", dv, 1e-8)
    D = _divisor(args, p)
    G = gauge_from_zero(p.system, D, seed=seed)
    cert.grid = grid_spec(seed=seed)
    cert.check("sum_residual", G.certificate["max_residual"], 1e-7)
    D3 = shifted_points(D, 3)
    G3 = gauge_from_zero(p.system, D3, seed=seed)
    pts = sample_grid(p.ctx.q, seed=seed, avoid=list(D.lifted_support()) + list(D3.lifted_support()))
    dd = float(np.max(np.abs(G.evaluate_many(pts) - G3.evaluate_many(pts))))
    cert.check("representative_shift", dd, 1e-8)
    if p.shape.k >= 2:
        divs = p.divisors if len(p.divisors) >= 2 else [D, _divisor(args, p, 1)]
        coc = build_cocycle(p.system, divs[:3], seed=seed)
        cert.check("cocycle_identity", coc.certificate["identity_residual"], 1e-8)
    return cert


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--q-re", type=float, help="real part of q (overrides the file)")
    common.add_argument("--q-im", type=float, help="imaginary part of q")
    common.add_argument("--window", type=int, help="window half-width N")
    common.add_argument("--tol", type=float, help="working tolerance")
    common.add_argument("--seed", type=int, help="seed for grids and random choices")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="qstokes", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def problem_cmd(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("problem", help="problem file (JSON)")
        sp.add_argument("--output", "-o", default=".", help="output directory")
        sp.add_argument("--no-figures", dest="figures", action="store_false")
        sp.set_defaults(func=func)
        return sp

    problem_cmd("normal-form", cmd_normal_form, "polynomial normal form and gauge")
    sp = problem_cmd("sum", cmd_sum, "canonical summed gauge for a divisor")
    sp.add_argument("--divisor", type=int, default=0, help="index of the divisor in the file")
    sp.add_argument("--target", help="second problem file providing A_V")
    sp = problem_cmd("cocycle", cmd_cocycle, "Stokes cocycle on several divisors")
    sp.add_argument("--divisor", type=int, default=0)
    sp.add_argument("-m", type=int, default=3, help="number of divisors when none are given")
    sp = problem_cmd("classify", cmd_classify, "analytic equivalence of two systems")
    sp.add_argument("--divisor", type=int, default=0)
    sp.add_argument("--target", help="second problem file")
    sp = problem_cmd("check", cmd_check, "run the property suite on a file")
    sp.add_argument("--divisor", type=int, default=0)

    sp = sub.add_parser("gen", parents=[common], help="seeded random problem file")
    sp.add_argument("--slopes", default="1,0", help="comma separated, decreasing")
    sp.add_argument("--ranks", help="comma separated block ranks")
    sp.add_argument("--degree", type=int, default=6)
    sp.add_argument("--decay", type=float, default=0.5)
    sp.add_argument("--planted", action="store_true", help="add an equivalent target system")
    sp.add_argument("--divisors", type=int, default=0, help="number of allowed divisors")
    sp.add_argument("--output", "-o", default="-", help="file name or - for stdout")
    sp.set_defaults(func=cmd_gen)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    t0 = time.perf_counter()
    try:
        cert = args.func(args)
    except QStokesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        w = getattr(exc, "witness", None)
        if w is not None:
            print(f"witness: {w}", file=sys.stderr)
        return exc.exit_code
    if cert is None:
        return 0
    cert.wall_time = time.perf_counter() - t0
    stem = _stem(args, f"certificate_{cert.command.replace('-', '_')}")
    cert.write(stem)
    for c in cert.checks:
        print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['value']:.3e} (tol {c['tol']:g})")
    for k, v in cert.verdicts.items():
        if k in ("verdict", "nu", "equivalent"):
            print(f"{k}: {v}")
    return 0 if cert.passed else 4


if __name__ == "__main__":
    sys.exit(main())
