"""Exception hierarchy.

Every error carries the process exit code the command line maps it to:
2 for invalid input, 3 for a refusal on mathematical grounds (the input is
valid but the request cannot be certified), 4 for numeric failure.
"""


class QStokesError(Exception):
    exit_code = 1


class ValidationError(QStokesError, ValueError):
    exit_code = 2


class DomainRefusal(QStokesError):
    exit_code = 3


class NotAllowedDivisor(DomainRefusal):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class BorderlineDivisor(DomainRefusal):
    def __init__(self, message, witness=None, distance=None):
        super().__init__(message)
        self.witness = witness
        self.distance = distance


class InconclusiveClassification(DomainRefusal):
    pass


class NumericFailure(QStokesError, ArithmeticError):
    exit_code = 4


class EvaluationOverflow(NumericFailure):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SingularBlock(NumericFailure):
    pass


class WindowTooSmall(NumericFailure):
    pass


class NearResonantIndex(NumericFailure):
    def __init__(self, message, index=None, condition=None):
        super().__init__(message)
        self.index = index
        self.condition = condition


class NonConvergence(NumericFailure):
    pass


class PoleProximity(NumericFailure):
    pass


class InternalInconsistency(NumericFailure):
    pass


class CertificationFailure(NumericFailure):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class DegenerateFit(NumericFailure):
    pass
