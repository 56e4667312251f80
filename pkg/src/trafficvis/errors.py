"""Exception types raised across the package."""


class TrafficVisError(Exception):
    """Base class for every error raised by trafficvis."""


class InputError(TrafficVisError):
    """Bad input data (files, bytes, labels). The CLI maps these to exit code 2."""


class GuardError(TrafficVisError):
    """A documented precondition guard was violated. The CLI maps these to exit code 3."""


# pcap ingest

class BadMagic(InputError):
    pass


class TruncatedHeader(InputError):
    pass


class TruncatedRecord(InputError):
    """A record claims more bytes than remain. ``packets`` holds everything parsed before it."""

    def __init__(self, message, packets=(), offset=None):
        super().__init__(message)
        self.packets = list(packets)
        self.offset = offset


class UnsupportedLinkType(InputError):
    pass


class MalformedHeader(InputError):
    pass


class NonPositiveSpeed(TrafficVisError, ValueError):
    pass


class SinkClosed(TrafficVisError):
    def __init__(self, delivered):
        super().__init__(f"sink closed after {delivered} chunk(s)")
        self.delivered = delivered


# byte classes / rendering

class EmptyInput(InputError, ValueError):
    pass


class IndexOutOfRange(TrafficVisError, ValueError):
    pass


class CoordOutOfRange(TrafficVisError, ValueError):
    pass


class ChunkTooLarge(InputError, ValueError):
    pass


# cnn

class WrongOrder(TrafficVisError, ValueError):
    pass


class ShapeMismatch(TrafficVisError, ValueError):
    pass


class TooFewSamples(GuardError):
    pass


class NonFiniteLoss(TrafficVisError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class VersionMismatch(InputError):
    pass


class SizeMismatch(InputError):
    pass


# metrics

class LengthMismatch(TrafficVisError, ValueError):
    pass


class DegenerateDenominator(TrafficVisError, ZeroDivisionError):
    pass


# dataset

class ParseError(InputError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InvalidLabel(InputError, ValueError):
    pass


class TooFewRecords(GuardError):
    pass


class BadProfile(InputError, ValueError):
    pass


# pipeline

class SourceFailure(TrafficVisError):
    def __init__(self, message, cause=None):
        super().__init__(message)
        self.cause = cause
