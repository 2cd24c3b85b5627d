"""Exception hierarchy shared by every stage of the pipeline."""


class RicError(Exception):
    """Base class; `module` and `step` are filled in when known."""

    module = "ricnn"

    def __init__(self, message, *, step=None):
        super().__init__(message)
        self.step = step

    def __str__(self):
        msg = super().__str__()
        if self.step is not None:
            return f"[t={self.step}] {msg}"
        return msg


class SchemaError(RicError):
    module = "panel"


class IntegrityError(RicError):
    module = "panel"


class PanelParseError(RicError):
    module = "panel"

    def __init__(self, message, rows=(), **kw):
        super().__init__(message, **kw)
        self.rows = list(rows)


class ParameterError(RicError, ValueError):
    pass


class DegenerateUniverseError(RicError, ValueError):
    module = "features"


class EmptySampleSetError(RicError):
    module = "features"


class ShapeError(RicError, ValueError):
    pass


class UndefinedCorrelationError(RicError, ValueError):
    module = "metrics"


class DomainError(RicError, ValueError):
    module = "metrics"


class InsufficientDataError(RicError, ValueError):
    module = "metrics"


class ZeroRiskError(RicError, ZeroDivisionError):
    module = "metrics"

    def __init__(self, annualized_return, risk):
        super().__init__(
            f"risk is zero (annualized return={annualized_return!r}, risk={risk!r})"
        )
        self.annualized_return = annualized_return
        self.risk = risk


class BatchTooSmallError(RicError, ValueError):
    module = "net"


class TrainingDivergedError(RicError):
    module = "trainer"

    def __init__(self, message, trace=(), **kw):
        super().__init__(message, **kw)
        self.trace = list(trace)


class DegenerateStepError(RicError):
    module = "trainer"


class ConfigError(RicError):
    module = "cli"
