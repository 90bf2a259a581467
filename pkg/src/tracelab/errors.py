"""Exception types shared across the package."""


class TracelabError(Exception):
    """Base class for all package errors."""


class ParamError(TracelabError, ValueError):
    """Invalid argument or parameter value."""


class ContractError(TracelabError, ValueError):
    """An operation's stated hypothesis was violated by the inputs."""


class InsufficientData(TracelabError, RuntimeError):
    """Too few samples / usable traces to produce a meaningful answer."""

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class Undecidable(TracelabError, RuntimeError):
    """No dominant candidate at a decision point."""

    def __init__(self, message, prefix=None, position=None):
        super().__init__(message)
        self.prefix = prefix
        self.position = position


class StitchMismatch(TracelabError, RuntimeError):
    """Forward and reverse reconstructions disagree on the overlap region."""

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class ReconstructionError(TracelabError, RuntimeError):
    """A reconstruction step failed; carries the failing position and partial result."""

    def __init__(self, message, position=None, partial=None):
        super().__init__(message)
        self.position = position
        self.partial = partial
