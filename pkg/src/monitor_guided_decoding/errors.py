"""
Exception hierarchy for monitor-guided decoding.
"""

from typing import Optional


class MgdError(Exception):
    """Base class for every error raised by this package."""


class VocabularyError(MgdError, ValueError):
    """Invalid vocabulary file, token id, or uncoverable text."""


class MaskError(MgdError):
    """A mask could not be computed or applied."""


class MonitorError(MgdError):
    """The monitor saw a token its own mask should have excluded."""


class ProviderError(MgdError):
    """The suggestion provider failed (transport, protocol, or lifecycle)."""


class ProviderTimeout(ProviderError):
    """The suggestion provider did not answer in time."""


class BackendError(MgdError):
    """The LM backend failed or was called with invalid input."""


class PromptError(MgdError, ValueError):
    """A prompt could not be built for the requested strategy."""


class DecodeError(MgdError):
    """Sampling could not proceed (empty mask, empty support, length mismatch)."""


class ConfigError(MgdError, ValueError):
    """Invalid run configuration."""


class DatasetError(MgdError, ValueError):
    """
    One or more dataset lines failed validation.

    Args:
        problems: (line number, message) pairs, 1-based line numbers
        source: Optional path of the offending file
    """

    def __init__(self, problems: list[tuple[int, str]], source: Optional[str] = None) -> None:
        self.problems = problems
        self.source = source
        where = f" in {source}" if source else ""
        listing = "; ".join(f"line {line}: {message}" for line, message in problems)
        super().__init__(f"invalid dataset{where}: {listing}")
