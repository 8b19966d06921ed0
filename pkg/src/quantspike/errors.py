"""Exception types shared across the package.

Each class marks one failure category so callers can catch precisely:
shape/dimension problems, bad configuration, API misuse, numeric
blow-ups, unparseable input files, and conversion preconditions.
All inherit QuantSpikeError, which the CLI maps to a clean exit code.
"""


class QuantSpikeError(Exception):
    """Base class for every error raised by this package on purpose."""


class ShapeMismatchError(QuantSpikeError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(QuantSpikeError, ValueError):
    """A structural parameter (architecture name, stride, window) is invalid."""


class UsageError(QuantSpikeError, RuntimeError):
    """The API was called out of contract (wrong order, wrong operand kind)."""


class NumericError(QuantSpikeError, ArithmeticError):
    """A non-finite value appeared where finite math is required."""


class InputError(QuantSpikeError, ValueError):
    """User-supplied data (labels, samples) violates a precondition."""


class ParseError(QuantSpikeError, ValueError):
    """A dataset file is malformed; message carries the offending location."""


class ConversionError(QuantSpikeError, RuntimeError):
    """The ANN cannot be mapped to a spiking network in its current state."""
