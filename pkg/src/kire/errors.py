class KIREError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(KIREError):
    exit_code = 2


class DataError(KIREError):
    exit_code = 3


class ParseError(DataError):
    pass


class VocabularyError(DataError):
    pass


class SpanError(DataError):
    pass


class RecordError(DataError):
    pass


class DocumentReferenceError(DataError):
    pass


class AlignmentError(DataError):
    pass


class EmbeddingFormatError(DataError):
    pass


class DivergenceError(KIREError):
    """A non-finite loss was produced during training."""

    exit_code = 4

    def __init__(self, message, batch_id=None):
        super().__init__(message)
        self.batch_id = batch_id
