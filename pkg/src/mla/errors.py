"""Exception hierarchy shared by the solver modules."""


class MLAError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MLAError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        shown = "; ".join(str(v) for v in self.violations[:5])
        more = len(self.violations) - 5
        if more > 0:
            shown += f"; ... ({more} more)"
        super().__init__(f"game graph invalid: {shown}")


class ParseError(MLAError, ValueError):
    def __init__(self, line, message):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class DimensionMismatch(MLAError, ValueError):
    pass


class NoConvergence(MLAError, RuntimeError):
    def __init__(self, message, residual, region=None):
        self.residual = residual
        self.region = region
        super().__init__(f"{message} (residual {residual:.3e})")


class DepthOutOfRange(MLAError, ValueError):
    pass


class StaleRegionId(MLAError, KeyError):
    pass


class CannotRefine(MLAError):
    """Every region that needs splitting is already a singleton."""


class ForeignStateInRegionLookup(MLAError, KeyError):
    pass


class RoundLimitExceeded(MLAError, RuntimeError):
    pass


class ProbeBudgetExceeded(MLAError, RuntimeError):
    pass


class NotAnMdp(MLAError, ValueError):
    pass


class ParamOutOfRange(MLAError, ValueError):
    pass


class StateSpaceTooLarge(MLAError, ValueError):
    pass


class CrossCheckFailed(MLAError, AssertionError):
    pass
