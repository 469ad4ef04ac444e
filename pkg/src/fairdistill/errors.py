"""Exception hierarchy shared across the package."""


class FairDistillError(Exception):
    """Base class for all errors raised by fairdistill."""


class ShapeError(FairDistillError, ValueError):
    pass


class DomainError(FairDistillError, ValueError):
    pass


class ParameterError(FairDistillError, ValueError):
    pass


class ConfigurationError(FairDistillError, ValueError):
    pass


class ContractError(FairDistillError, RuntimeError):
    pass


class NumericError(FairDistillError, ArithmeticError):
    pass


class FormatError(FairDistillError, ValueError):
    pass


class TrainingError(FairDistillError, RuntimeError):
    def __init__(self, message, epoch=None, step=None):
        super().__init__(f"{message} (epoch={epoch}, step={step})")
        self.epoch = epoch
        self.step = step
