"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """An operation was asked to combine arrays with incompatible shapes."""


class ContainerFormatError(ValueError):
    """A binary tensor container could not be parsed."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or references missing files."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values and was aborted."""
