"""Normal forms, summation and Stokes cocycles for irregular q-difference systems."""

from .errors import (DomainRefusal, InconclusiveClassification, NotAllowedDivisor,
                     NumericFailure, QStokesError, ValidationError)
from .laurent import QContext, SeriesMatrix, WindowedLaurent
from .normalform import (birkhoff_guenther, formal_fixpoint, formal_link, nu_invariant,
                         ocstar_normalize, qborel, red_pair)
from .stokes import build_cocycle, classify_pair, flatness_level, level_pattern
from .summation import flatten, gauge_from_zero, sample_grid, solve_regular, sum_gauge
from .system import BlockMatrix, BlockShape, GaugeElement, gauge_action, newton_polygon
from .theta import SummationDivisor, ThetaGauge, is_allowed, theta_coeffs, theta_value

__all__ = [
    "DomainRefusal",
    "InconclusiveClassification",
    "NotAllowedDivisor",
    "NumericFailure",
    "QStokesError",
    "ValidationError",
    "QContext",
    "SeriesMatrix",
    "WindowedLaurent",
    "birkhoff_guenther",
    "formal_fixpoint",
    "formal_link",
    "nu_invariant",
    "ocstar_normalize",
    "qborel",
    "red_pair",
    "build_cocycle",
    "classify_pair",
    "flatness_level",
    "level_pattern",
    "flatten",
    "gauge_from_zero",
    "sample_grid",
    "solve_regular",
    "sum_gauge",
    "BlockMatrix",
    "BlockShape",
    "GaugeElement",
    "gauge_action",
    "newton_polygon",
    "SummationDivisor",
    "ThetaGauge",
    "is_allowed",
    "theta_coeffs",
    "theta_value",
]

__version__ = "0.1.0"
