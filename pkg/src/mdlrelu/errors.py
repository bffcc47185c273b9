"""Exception hierarchy shared by the library and the CLI."""


class MdlError(Exception):
    """Base class for all errors raised by mdlrelu."""


class ConfigError(MdlError, ValueError):
    """Invalid experiment configuration or argument."""


class NumericalError(MdlError, ArithmeticError):
    """A numerical routine failed or produced an inconsistent result."""


class DegenerateBasisError(NumericalError):
    """The approximate eigenbasis or its Gram matrix is unusable for this W."""


class SearchBudgetError(MdlError):
    """Exhaustive grid search would exceed the configured point budget."""
