"""Exception types raised across the package."""


class FedselError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FedselError, ValueError):
    """Invalid configuration or input that the caller can fix."""


class ContractViolation(FedselError, ValueError):
    """An operation was called outside its documented preconditions."""


class NumericalError(FedselError, RuntimeError):
    """A numerical routine failed to converge."""


class DivergenceError(FedselError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, client_id=None, round_index=None):
        super().__init__(message)
        self.client_id = client_id
        self.round_index = round_index
