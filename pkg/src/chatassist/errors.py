"""Exception catalog shared by all chatassist modules."""

from __future__ import annotations


class ChatAssistError(Exception):
    """Base class for every error raised by this package."""


# --- schema / vector errors ---------------------------------------------


class EmptyCorpusError(ChatAssistError):
    """A non-empty corpus of events or messages was required."""


class NotEnoughCategoriesError(ChatAssistError):
    def __init__(self, requested: int, distinct: int):
        super().__init__(
            f"requested {requested} labels but only {distinct} distinct categories exist"
        )
        self.requested = requested
        self.distinct = distinct


class MalformedVectorError(ChatAssistError):
    """An information vector is inconsistent with the active label list."""


class CategoryOutsideSchemaError(ChatAssistError):
    """A gold tag category is not part of the active label list."""


class SchemaMismatchError(ChatAssistError):
    """A model bundle was trained against a different tag schema."""


# --- network / dataset errors -------------------------------------------


class InvalidDimsError(ChatAssistError):
    """Network input/output dimensions must be positive."""


class EmptyDatasetError(ChatAssistError):
    """A non-empty labeled dataset was required."""


class DivergenceDetectedError(ChatAssistError):
    """Training produced a non-finite loss."""


class DimMismatchError(ChatAssistError):
    """Feature vector length does not match the network input dimension."""


# --- advisor errors ------------------------------------------------------


class UnorderedLogError(ChatAssistError):
    """Session log events are not in non-decreasing timestamp order."""


class UnknownActionRefError(ChatAssistError):
    """An operator action references an id absent from the advice catalog."""


class InsufficientDataError(ChatAssistError):
    """Too few rows or classes to train an ensemble."""


class GateUnsatisfiableError(ChatAssistError):
    """The accuracy gate rejected too many candidate networks in a row."""


# --- client simulator errors ---------------------------------------------


class StoryboardParseError(ChatAssistError):
    """Storyboard document does not parse against the storyboard schema."""


class UnknownAttributeError(ChatAssistError):
    """Storyboard persona uses an attribute outside the domain schema."""


class UnresolvableObjectiveError(ChatAssistError):
    """No advice item in the catalog can satisfy a storyboard objective."""


# --- orchestrator / service errors ----------------------------------------


class TooManyClientsError(ChatAssistError):
    """Client count exceeds the configured per-session maximum."""


class MissingModelBundleError(ChatAssistError):
    """Advise modes require loaded advisor/tagger bundles."""


class SessionClosedError(ChatAssistError):
    """Events may not be appended for a client whose session has ended."""


class UnknownClientError(ChatAssistError):
    """The client id is not part of this session."""


class MessageIndexOutOfRangeError(ChatAssistError):
    """A tag refers to a message index that does not exist yet."""


class IncompleteLogError(ChatAssistError):
    """Time metrics require a session_end event for every client."""


class CorruptLogError(ChatAssistError):
    """A session log file could not be parsed."""


class PortInUseError(ChatAssistError):
    """The configured service port is already bound."""


class BadConfigError(ChatAssistError):
    """Service configuration is missing or inconsistent."""
