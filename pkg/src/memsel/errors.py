"""Exception types shared by all memsel modules."""


class EngineError(Exception):
    """Base class for every error this package raises on bad input or state."""


# --- file and store errors -------------------------------------------------

class MissingFile(EngineError):
    pass


class IoFailure(EngineError):
    pass


class UnsupportedVersion(EngineError):
    pass


class DimMismatch(EngineError):
    pass


class CountMismatch(EngineError):
    pass


class NonFiniteValue(EngineError):
    pass


class NotNormalized(EngineError):
    """Store claims normalized=true but a row norm falls outside tolerance."""


class ParseError(EngineError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AmbiguousLoss(EngineError):
    """Item must carry exactly one of: non-empty references, correct flag."""


class DuplicateId(EngineError):
    pass


# --- retrieval and scoring errors -------------------------------------------

class EmptySet(EngineError):
    pass


class ZeroVector(EngineError):
    pass


class ModalityMismatch(EngineError):
    pass


class MissingImageEmbedding(EngineError):
    pass


class EmptyCandidates(EngineError):
    pass


class MissingCandidateEmbeddings(EngineError):
    """Contrastive scoring needs embedded candidates; the engine never encodes text."""


class NonPositiveTemperature(EngineError):
    pass


class NoSubstitutableToken(EngineError):
    pass


# --- text metric errors ------------------------------------------------------

class EmptyCorpus(EngineError):
    pass


class EmptyCandidate(EngineError):
    pass


class EmptyReferences(EngineError):
    pass


class MissingIdf(EngineError):
    pass


# --- evaluation errors -------------------------------------------------------

class EmptyInput(EngineError):
    pass


class NonFiniteScore(EngineError):
    pass


class UnmappedItem(EngineError):
    pass


class InvalidConfig(EngineError):
    pass
