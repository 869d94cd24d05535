import csv
import json
import os
import shutil
import subprocess
import sys

import pytest
from hypothesis import given, settings, strategies as st

from qstokes import io as qio
from qstokes.cli import main
from qstokes.errors import ValidationError
from qstokes.gen import gen_instance

DATA = os.path.join(os.path.dirname(__file__), "data")


def data(name):
    return os.path.join(DATA, name)


def problems_equal(a: qio.ProblemFile, b: qio.ProblemFile) -> bool:
    if a.ctx != b.ctx or not a.shape.same_as(b.shape, tol=0) or a.seed != b.seed:
        return False
    for x, y in ((a.system, b.system), (a.target, b.target)):
        if (x is None) != (y is None):
            return False
        if x is not None:
            if set(x.blocks) != set(y.blocks):
                return False
            if any(not x.U(*k).allclose(y.U(*k), rtol=0) for k in x.blocks):
                return False
    return [d.points for d in a.divisors] == [d.points for d in b.divisors]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([(1, 0), (2, 0), (2, 1, 0), (0, -1, -3)]),
       st.booleans(), st.integers(0, 2))
def test_round_trip(seed, slopes, planted, ndiv):
    A, B, divs = gen_instance(seed, slopes, q=2.0 + 0.5j, planted=planted, n_divisors=ndiv)
    p = qio.ProblemFile(A, B, divs, seed)
    text = qio.dumps(p.to_json())
    back = qio.ProblemFile.from_json(json.loads(text))
    assert problems_equal(p, back)
    assert qio.dumps(back.to_json()) == text


def test_validation_errors():
    base = json.load(open(data("tschakaloff.json")))
    bad = dict(base, format=2)
    with pytest.raises(ValidationError):
        qio.ProblemFile.from_json(bad)
    bad = dict(base, blocks={"(1,0)": base["blocks"]["(0,1)"]})
    with pytest.raises(ValidationError):
        qio.ProblemFile.from_json(bad)
    bad = dict(base, blocks={"(0,1)": {"lo": 0, "hi": 2, "coeffs": [[[1, 0]]]}})
    with pytest.raises(ValidationError):
        qio.ProblemFile.from_json(bad)
    bad = dict(base, shape=dict(base["shape"], slopes=[-1, 0]))
    with pytest.raises(ValidationError):
        qio.ProblemFile.from_json(bad)


def test_certificate_csv_and_atomic_write(tmp_path):
    c = qio.Certificate("sum", "abc", seed=1)
    c.check("residual", 1e-12, 1e-7)
    c.check("other", 1.0, 0.5)
    assert not c.passed
    c.write(str(tmp_path / "cert"))
    rows = list(csv.reader(open(tmp_path / "cert.csv")))
    assert rows[0] == ["name", "value", "tol", "pass"]
    assert rows[1][0] == "residual" and rows[1][3] == "1" and rows[2][3] == "0"
    js = json.load(open(tmp_path / "cert.json"))
    assert js["format"] == 1 and js["pass"] is False
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp")]


def test_normal_form_tschakaloff(tmp_path, capsys):
    assert main(["normal-form", data("tschakaloff.json"), "-o", str(tmp_path)]) == 0
    cert = json.load(open(tmp_path / "certificate_normal_form.json"))
    assert cert["verdicts"]["nu"] == [1.0, 0.0]
    assert (tmp_path / "normal_form.png").exists()
    nf = qio.load_problem(str(tmp_path / "normal_form.json"))
    assert nf.system.U(0, 1).coefficient(0)[0, 0] == 1


def test_normal_form_graded(tmp_path):
    assert main(["normal-form", data("graded.json"), "-o", str(tmp_path)]) == 0
    cert = json.load(open(tmp_path / "certificate_normal_form.json"))
    assert all(c["pass"] for c in cert["residuals"])


def test_exit_codes(tmp_path, capsys):
    assert main(["normal-form", data("bad_q.json"), "-o", str(tmp_path)]) == 2
    assert main(["sum", data("prohibited.json"), "-o", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    assert "not allowed" in err and "witness" in err
    assert main(["sum", str(tmp_path / "missing.json"), "-o", str(tmp_path)]) == 2
    assert main(["classify", data("tschakaloff.json"), "-o", str(tmp_path)]) == 2


def test_sum_graded_identity_table(tmp_path):
    assert main(["sum", data("graded.json"), "-o", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "gauge_table.csv")))
    assert len(rows) == 60
    assert all(float(r["F01_re"]) == 0 and float(r["F01_im"]) == 0 for r in rows)


def test_classify_commands(tmp_path):
    assert main(["classify", data("tschakaloff_vs_graded.json"), "-o", str(tmp_path)]) == 0
    cert = json.load(open(tmp_path / "certificate_classify.json"))
    assert cert["verdicts"]["verdict"] == "not equivalent"
    t = data("tschakaloff.json")
    assert main(["classify", t, "--target", t, "-o", str(tmp_path)]) == 0
    cert = json.load(open(tmp_path / "certificate_classify.json"))
    assert cert["verdicts"]["equivalent"] is True


def test_gen_reproducible_and_planted(tmp_path):
    args = ["gen", "--seed", "5", "--slopes", "2,1,0", "--ranks", "1,2,1", "--planted",
            "--divisors", "3"]
    assert main(args + ["-o", str(tmp_path / "a.json")]) == 0
    assert main(args + ["-o", str(tmp_path / "b.json")]) == 0
    a = open(tmp_path / "a.json").read()
    assert a == open(tmp_path / "b.json").read()
    p = qio.load_problem(str(tmp_path / "a.json"))
    assert p.shape.slopes == (2, 1, 0) and p.shape.ranks == (1, 2, 1)
    out = tmp_path / "out"
    assert main(["classify", str(tmp_path / "a.json"), "-o", str(out)]) == 0
    assert json.load(open(out / "certificate_classify.json"))["verdicts"]["equivalent"]
    assert main(["cocycle", str(tmp_path / "a.json"), "-o", str(out)]) == 0
    assert (out / "flatness.csv").exists() and (out / "flatness.png").exists()
    assert main(["check", str(tmp_path / "a.json"), "-o", str(out)]) == 0


def test_overrides(tmp_path):
    assert main(["normal-form", data("tschakaloff.json"), "--q-re", "0.5",
                 "-o", str(tmp_path)]) == 2
    assert main(["normal-form", data("tschakaloff.json"), "--q-re", "2", "--q-im", "1",
                 "--window", "30", "-o", str(tmp_path)]) == 0


def test_console_script(tmp_path):
    exe = shutil.which("qstokes")
    cmd = [exe] if exe else [sys.executable, "-m", "qstokes.cli"]
    r = subprocess.run(cmd + ["sum", data("prohibited.json"), "-o", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 3
