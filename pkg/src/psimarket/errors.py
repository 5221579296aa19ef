"""Exception hierarchy shared by every module of the simulator."""


class SimulationError(Exception):
    """Base class for all errors raised by psimarket."""


# ledger -------------------------------------------------------------------

class LedgerError(SimulationError):
    pass


class ZeroAmountError(LedgerError):
    pass


class UnknownIssuerError(LedgerError):
    pass


class UnknownAgentError(LedgerError):
    pass


class UngatedPsiIssueError(LedgerError):
    """A PSI issuance was attempted before delivery of the service was confirmed."""


class InsufficientBalanceError(LedgerError):
    pass


class SelfTransferError(LedgerError):
    pass


class WrongIssuerError(LedgerError):
    pass


class AlreadyExhaustedError(LedgerError):
    pass


class UnknownClassError(LedgerError):
    pass


class InvalidInstrumentError(LedgerError, ValueError):
    pass


# exchange -----------------------------------------------------------------

class ExchangeError(SimulationError):
    pass


class GoodsUnavailableError(ExchangeError):
    pass


class MediumRejectedError(ExchangeError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class NotOpenError(ExchangeError):
    pass


class WrongBearerError(ExchangeError):
    pass


class DoubleCompletionError(ExchangeError):
    pass


class UnknownGoodError(SimulationError, KeyError):
    pass


# regimes ------------------------------------------------------------------

class RegimeError(SimulationError):
    pass


class ReserveLimitExceededError(RegimeError):
    pass


class UnknownBorrowerError(RegimeError):
    pass


class VoteFailedError(RegimeError):
    pass


class DuplicateSpecError(RegimeError):
    pass


class NotRequestedError(RegimeError):
    pass


class AlreadyDeliveredError(RegimeError):
    pass


class NoServiceDemandError(RegimeError):
    pass


# metrics ------------------------------------------------------------------

class MetricsError(SimulationError, ValueError):
    pass


class AllZeroError(MetricsError):
    pass


class DegenerateInputError(MetricsError):
    pass


class MissingBaseError(MetricsError):
    pass


class ZeroOutstandingError(MetricsError):
    pass


class MismatchedAgentsError(MetricsError):
    pass


class SeriesTooShortError(MetricsError):
    pass


# configuration --------------------------------------------------------------

class InvalidConfigError(SimulationError, ValueError):
    """Raised for any scenario configuration problem; ``key`` names the offending field."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class ScenarioSyntaxError(InvalidConfigError):
    pass


class MissingFieldError(InvalidConfigError):
    pass


class UnknownKeyError(InvalidConfigError):
    pass


class RangeViolationError(InvalidConfigError):
    pass
