"""Exception types shared across the package."""


class StochmatError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(StochmatError):
    pass


class ReducibleChain(StochmatError):
    pass


class SchurFailure(StochmatError):
    pass


class SingularColumnSystem(StochmatError):
    """A per-column system of the structured solve is numerically singular."""

    def __init__(self, column, cond=None):
        self.column = column
        self.cond = cond
        msg = f"column system {column} is numerically singular"
        if cond is not None:
            msg += f" (condition estimate {cond:.3e})"
        super().__init__(msg)


class ImaginaryLeakage(StochmatError):
    pass


class NearSingularIminusU(StochmatError):
    pass


class NotConverged(StochmatError):
    """Iteration cap reached; carries the partial report of the run."""

    def __init__(self, report, message="iteration did not reach tolerance"):
        self.report = report
        super().__init__(message)


class SingularSystem(StochmatError):
    pass


class SizeGuard(StochmatError):
    pass


class ParseError(StochmatError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class ValidationError(StochmatError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class NotConvergedWarning(UserWarning):
    pass
