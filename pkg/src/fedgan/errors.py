"""Exception hierarchy shared by every fedgan module."""


class FedGanError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMatrix(FedGanError, ValueError):
    pass


class NumericalFailure(FedGanError, ArithmeticError):
    pass


class NotPSD(FedGanError, ValueError):
    pass


class InvalidArchitecture(FedGanError, ValueError):
    pass


class ShapeError(FedGanError, ValueError):
    pass


class EmptyDataset(FedGanError, ValueError):
    pass


class InvalidSpec(FedGanError, ValueError):
    pass


class TooFewSamples(FedGanError, ValueError):
    pass


class InvalidInput(FedGanError, ValueError):
    pass


class NoUpdates(FedGanError, ValueError):
    pass


class CodecError(FedGanError, ValueError):
    pass


class ConfigError(FedGanError, ValueError):
    """Raised with every violation found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ClientFailure(FedGanError, RuntimeError):
    def __init__(self, client_id, cause):
        self.client_id = client_id
        self.cause = cause
        super().__init__(f"client {client_id} failed: {cause}")
