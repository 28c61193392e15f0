"""Exception types shared across the toolkit."""


class DischargeKitError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(DischargeKitError):
    """An input file does not match the expected schema."""


class DuplicateKeyError(DischargeKitError):
    """An identifier that must be unique appeared more than once."""

    def __init__(self, message: str, keys: list[str]):
        super().__init__(message)
        self.keys = keys


class InsufficientDataError(DischargeKitError):
    """Too few data points for the requested statistic."""


class ContractError(DischargeKitError):
    """A caller violated an operation's precondition."""


class AdapterProtocolError(DischargeKitError):
    """An external scorer adapter replied outside its contract."""


class EndpointError(DischargeKitError):
    """A generation endpoint could not be reached."""
