"""Exception hierarchy; ``exit_code`` is what the command-line front end returns."""


class OseenStabError(Exception):
    exit_code = 1


class ConfigError(OseenStabError, ValueError):
    exit_code = 2

    def __init__(self, message, line=None, col=None, key=None):
        self.line = line
        self.col = col
        self.key = key
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(message + where)


class SpectrumError(OseenStabError):
    exit_code = 3


class NeutralEigenvalue(SpectrumError):
    """An eigenvalue lies within the margin of the imaginary axis."""


class DegeneratePairing(SpectrumError):
    """A direct/adjoint pairing is numerically zero (near-defective eigenvalue)."""


class EigenSolverError(SpectrumError):
    pass


class HypothesisFailure(SpectrumError):
    """Semisimplicity or unique-continuation check failed."""


class IndependenceFailure(SpectrumError):
    """The adjoint boundary traces are numerically linearly dependent."""


class InfeasibleGains(OseenStabError):
    exit_code = 4

    def __init__(self, message, blocking=None):
        self.blocking = blocking or []
        super().__init__(message)


class ShiftTooSmall(OseenStabError):
    """The shifted steady operator is singular; increase the shift."""

    exit_code = 4


class VerificationFailure(OseenStabError):
    exit_code = 5


class NoControl(OseenStabError):
    """Control output is zero, so boundary angles are undefined."""

    exit_code = 5


class FitUndefined(OseenStabError, ValueError):
    exit_code = 5
