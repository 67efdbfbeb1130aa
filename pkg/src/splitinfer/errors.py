"""Exception taxonomy.

The CLI maps these onto process exit codes: format/consistency problems
exit 3, an infeasible plan exits 2, anything else exits 1.
"""


class SplitInferError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(SplitInferError):
    """A file or bitstream violates its binary format."""


class BadMagic(FormatError):
    pass


class VersionUnsupported(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


class CorruptPayload(FormatError):
    """Bitstream payload exhausted early, invalid codeword, or bad length."""


class TrailingGarbage(FormatError):
    """Nonzero bits found in the final pad byte of a bitstream."""


class ShapeMismatch(SplitInferError):
    """Tensor or layer shapes do not compose."""


class ModelMismatch(SplitInferError):
    """Codec model hash or tensor shape does not match the bitstream."""


class InvalidCut(SplitInferError):
    """Split index out of range or inside a residual span."""


class NonFiniteActivation(SplitInferError):
    """A layer produced NaN or Inf."""


class NotSymmetric(SplitInferError):
    pass


class EmptyCalibration(SplitInferError):
    pass


class EmptyInput(SplitInferError):
    pass


class EmptyReport(SplitInferError):
    pass


class Infeasible(SplitInferError):
    """No trade-off point satisfies the constraints.

    Carries the nearest-violation point for diagnostics.
    """

    def __init__(self, message, nearest=None):
        super().__init__(message)
        self.nearest = nearest


class TransportError(SplitInferError):
    pass


class TooLarge(TransportError):
    pass


class TruncatedStream(TransportError):
    pass


class ConnectionFailed(TransportError):
    pass


class RemoteTimeout(TransportError):
    pass


class ServerError(TransportError):
    """Error frame returned by the remote endpoint."""

    def __init__(self, code, message):
        super().__init__(f"server error {code}: {message}")
        self.code = code
        self.message = message
