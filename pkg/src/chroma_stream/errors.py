"""Exception types raised across the package."""


class ChromaError(Exception):
    """Base class for all errors raised by chroma_stream."""


class EmptyInput(ChromaError, ValueError):
    pass


class RatioError(ChromaError, ValueError):
    """Too few coarse codes to honour the 1:2 text/audio schedule."""


class MalformedSequence(ChromaError, ValueError):
    pass


class ContextOverflow(ChromaError, RuntimeError):
    pass


class LevelOutOfRange(ChromaError, IndexError):
    pass


class DimensionMismatch(ChromaError, ValueError):
    pass


class CodeOutOfRange(ChromaError, ValueError):
    pass


class TooShort(ChromaError, ValueError):
    pass


class ShapeMismatch(ChromaError, ValueError):
    pass


class NonFiniteGradient(ChromaError, FloatingPointError):
    pass


class DivergenceDetected(ChromaError, FloatingPointError):
    pass


class ZeroAudio(ChromaError, ZeroDivisionError):
    pass


class ZeroVector(ChromaError, ValueError):
    pass


class PipelineFailure(ChromaError, RuntimeError):
    """A generation stage failed; ``partial`` carries whatever timings were recorded."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
