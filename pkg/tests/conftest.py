import numpy as np
import pytest

from qstokes.laurent import QContext, SeriesMatrix, WindowedLaurent
from qstokes.system import BlockMatrix, BlockShape


@pytest.fixture
def ctx():
    return QContext(3.0, 40)


def scalar_system(ctx, slopes, u=None, values=None):
    """Scalar blocks; ``u`` maps (i, j) to coefficient lists starting at degree 0."""
    shape = BlockShape.scalar(slopes, values)
    blocks = {k: WindowedLaurent(ctx, 0, v) for k, v in (u or {}).items()}
    return BlockMatrix(ctx, shape, blocks)


def rand_series(ctx, rng, lo, hi, rows=None, cols=None, decay=1.0):
    L = hi - lo + 1
    shp = (L,) if rows is None else (rows, cols, L)
    c = rng.standard_normal(shp) + 1j * rng.standard_normal(shp)
    c = c * decay ** np.abs(np.arange(lo, hi + 1))
    return WindowedLaurent(ctx, lo, c) if rows is None else SeriesMatrix(ctx, lo, c)


# acceptance lines, one per criterion, printed at the end of the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
