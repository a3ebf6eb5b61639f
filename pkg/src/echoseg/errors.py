"""Exception hierarchy.

``InputError`` subclasses signal malformed or inconsistent inputs, ``PipelineError``
subclasses signal algorithmic dead ends. The CLI maps them to exit codes 2 and 3.
"""


class EchoSegError(Exception):
    pass


class InputError(EchoSegError, ValueError):
    pass


class PipelineError(EchoSegError):
    pass


class ParseError(InputError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class MissingProperty(ParseError):
    def __init__(self, name):
        super().__init__(f"missing required property {name!r}")
        self.name = name


class UnexpectedEof(ParseError):
    pass


class UnsupportedFormat(InputError):
    pass


class CorruptContainer(ParseError):
    pass


class DimensionMismatch(InputError):
    pass


class InvalidParams(InputError):
    pass


class InvalidSpec(InputError):
    pass


class EmptyViews(InputError):
    pass


class EmptyClip(InputError):
    pass


class EmptyObservations(InputError):
    pass


class EmptyFrames(InputError):
    pass


class TooFewFrames(InputError):
    pass


class EmptyCluster(PipelineError):
    pass


class NoClusters(PipelineError):
    pass


class NotVisible(PipelineError):
    pass


class NoQualifyingGaussians(PipelineError):
    pass
