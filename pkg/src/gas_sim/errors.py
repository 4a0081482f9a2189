"""Exception types raised across the package."""


class GasError(Exception):
    """Base class for every error raised by gas_sim."""


class ShapeMismatch(GasError, ValueError):
    pass


class NonFinite(GasError, ArithmeticError):
    pass


class ZeroClassProbability(GasError, ValueError):
    pass


class StaleCache(GasError, ValueError):
    pass


class DimensionMismatch(GasError, ValueError):
    pass


class EmptyInput(GasError, ValueError):
    pass


class BufferOverflow(GasError, RuntimeError):
    pass


class BufferNotFull(GasError, RuntimeError):
    pass


class IneligibleLabel(GasError, ValueError):
    pass


class NonPSD(GasError, ArithmeticError):
    pass


class DomainError(GasError, ValueError):
    pass


class NoIdleClient(GasError, RuntimeError):
    pass


class ConfigInvalid(GasError, ValueError):
    pass


class TooFewSamples(GasError, ValueError):
    pass


class BadMagic(GasError, ValueError):
    pass


class TruncatedFile(GasError, ValueError):
    pass


class CountMismatch(GasError, ValueError):
    pass


class ParseError(GasError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(ConfigInvalid):
    pass


class VersionMismatch(GasError, RuntimeError):
    pass


class ConfigHashMismatch(GasError, RuntimeError):
    pass


class SimulationError(GasError, RuntimeError):
    """Numeric failure inside the event loop, annotated with where it happened."""

    def __init__(self, message, time=None, client=None):
        self.time = time
        self.client = client
        super().__init__(f"{message} (t={time}, client={client})")
