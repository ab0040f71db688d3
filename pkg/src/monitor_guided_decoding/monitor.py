"""
The type-consistency monitor: trigger detection, state evolution and masks.

The monitor waits until the partial program ends in an object dereference
``obj.``, asks a suggestion source for the identifiers reachable through
``obj``, then masks every token that cannot spell one of them. Each sampled
token prunes the residual suggestions until a delimiter ends the identifier
and the monitor returns to waiting.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Union

from .errors import MonitorError, ProviderError
from .javalex import JavaToken, TokenKind, lex
from .vocab import DEFAULT_DELIMITERS, DelimiterSet, Mask, SuggestionSet, Vocabulary, maskgen

logger = logging.getLogger(__name__)


class MonitorMode(Enum):
    """Monitor modes."""

    WAIT = "wait"
    ACTIVE = "active"
    ABANDONED = "abandoned"


class EmptySuggestionPolicy(Enum):
    """What to do when the analysis returns no suggestions at a trigger."""

    ABANDON = "abandon"
    UNCONSTRAINED = "unconstrained"


class ProviderFailurePolicy(Enum):
    """What to do when the suggestion provider fails or times out."""

    EMPTY = "empty"
    PROPAGATE = "propagate"


@dataclass(frozen=True)
class MonitorState:
    """Wait, Active over a non-empty residual set, or Abandoned."""

    mode: MonitorMode
    residuals: SuggestionSet = field(default_factory=SuggestionSet)

    def __post_init__(self) -> None:
        if self.mode is MonitorMode.ACTIVE and not self.residuals:
            raise MonitorError("active monitor state needs a non-empty residual set")
        if self.mode is not MonitorMode.ACTIVE and self.residuals:
            raise MonitorError(f"{self.mode.value} monitor state cannot hold residuals")

    @classmethod
    def wait(cls) -> "MonitorState":
        return cls(MonitorMode.WAIT)

    @classmethod
    def active(cls, residuals: SuggestionSet) -> "MonitorState":
        return cls(MonitorMode.ACTIVE, residuals)

    @classmethod
    def abandoned(cls) -> "MonitorState":
        return cls(MonitorMode.ABANDONED)

    @property
    def is_wait(self) -> bool:
        return self.mode is MonitorMode.WAIT

    @property
    def is_active(self) -> bool:
        return self.mode is MonitorMode.ACTIVE

    @property
    def is_abandoned(self) -> bool:
        return self.mode is MonitorMode.ABANDONED

    def describe(self) -> dict[str, object]:
        return {"mode": self.mode.value, "residuals": self.residuals.names()}


@dataclass(frozen=True)
class TriggerContext:
    """Prompt tail plus generation so far; ``cursor`` defaults to the end."""

    generated_text: str
    cursor: Optional[int] = None

    def __post_init__(self) -> None:
        if self.cursor is None:
            object.__setattr__(self, "cursor", len(self.generated_text))
        elif not 0 <= self.cursor <= len(self.generated_text):
            raise ValueError(f"cursor {self.cursor} outside text of length {len(self.generated_text)}")

    @property
    def frontier_text(self) -> str:
        return self.generated_text[: self.cursor]


_RECEIVER_KEYWORDS = frozenset({"this", "super", "class"})


def _is_receiver(token: JavaToken) -> bool:
    if token.kind in (TokenKind.IDENTIFIER, TokenKind.STRING_LITERAL):
        return True
    if token.kind is TokenKind.KEYWORD:
        return token.text in _RECEIVER_KEYWORDS
    return token.kind is TokenKind.PUNCTUATOR and token.text in (")", "]")


def _is_dot(token: JavaToken) -> bool:
    return token.kind is TokenKind.OPERATOR and token.text == "."


def trigger_anchor(ctx: TriggerContext) -> Optional[int]:
    """Offset of the dereferencing '.' ending the frontier, or None if not triggered."""
    text = ctx.frontier_text
    stripped = text.rstrip()
    if not stripped.endswith("."):
        return None
    tokens = lex(text)
    if len(tokens) < 2:
        return None
    last, receiver = tokens[-1], tokens[-2]
    # a trailing comment or a float literal such as "3." ends differently
    if not _is_dot(last) or last.end != len(stripped):
        return None
    return last.offset if _is_receiver(receiver) else None


def pre_trigger(ctx: TriggerContext) -> bool:
    """True iff the frontier ends with a partial object dereference ``obj.``."""
    return trigger_anchor(ctx) is not None


def dereference_points(source: str) -> list[int]:
    """Offsets of every '.' in ``source`` that would trigger the monitor."""
    tokens = lex(source)
    return [tok.offset for prev, tok in zip(tokens, tokens[1:]) if _is_dot(tok) and _is_receiver(prev)]


def on_trigger(
    provider_result: SuggestionSet, on_empty: EmptySuggestionPolicy = EmptySuggestionPolicy.ABANDON
) -> MonitorState:
    """Next state after the analysis answered at a trigger."""
    if provider_result:
        return MonitorState.active(provider_result)
    if on_empty is EmptySuggestionPolicy.UNCONSTRAINED:
        return MonitorState.wait()
    return MonitorState.abandoned()


def update(
    state: MonitorState, sampled_token: Union[bytes, str], delims: DelimiterSet = DEFAULT_DELIMITERS
) -> MonitorState:
    """
    Advance an active monitor over one sampled token.

    Raises:
        MonitorError: If the monitor is not active, or the token neither carries
            a delimiter nor prefixes any residual (mask violation)
    """
    if not state.is_active:
        raise MonitorError(f"update needs an active monitor, got {state.mode.value}")
    token = sampled_token.encode("utf-8") if isinstance(sampled_token, str) else sampled_token
    if delims.contains_any(token):
        return MonitorState.wait()
    residuals = state.residuals.advance(token)
    if not residuals:
        raise MonitorError(f"mask violation: {token!r} does not continue any of {state.residuals.names()}")
    return MonitorState.active(residuals)


class SuggestionSource(Protocol):
    """Anything that can answer the analysis query at a trigger."""

    def suggest(self, ctx: TriggerContext, anchor: int) -> SuggestionSet: ...


@dataclass(frozen=True)
class StepOutcome:
    """Result of one monitor step, ahead of sampling one token."""

    state: MonitorState
    mask: Optional[Mask] = None
    triggered: bool = False
    suggestions: Optional[SuggestionSet] = None
    provider_error: Optional[str] = None
    anchor: Optional[int] = None

    @property
    def abort(self) -> bool:
        return self.state.is_abandoned


class TypeConsistencyMonitor:
    """
    Monitor for type-consistent identifiers after a dereference.

    Args:
        vocab: The LM vocabulary masks are computed over
        delims: Identifier delimiter set
        on_empty: Policy for an empty suggestion set
        on_provider_failure: Policy for provider errors and timeouts
    """

    def __init__(
        self,
        vocab: Vocabulary,
        delims: DelimiterSet = DEFAULT_DELIMITERS,
        on_empty: EmptySuggestionPolicy = EmptySuggestionPolicy.ABANDON,
        on_provider_failure: ProviderFailurePolicy = ProviderFailurePolicy.EMPTY,
    ) -> None:
        self.vocab = vocab
        self.delims = delims
        self.on_empty = on_empty
        self.on_provider_failure = on_provider_failure

    def initial_state(self) -> MonitorState:
        return MonitorState.wait()

    def mask_for(self, state: MonitorState) -> Mask:
        return maskgen(state.residuals, self.vocab, self.delims)

    def step(self, state: MonitorState, ctx: TriggerContext, source: SuggestionSource) -> StepOutcome:
        """
        Decide the mask for the next token.

        Wait without a trigger yields no mask; Wait with a trigger queries
        ``source`` once; Active yields the residual mask; Abandoned aborts.
        """
        if state.is_abandoned:
            return StepOutcome(state)
        if state.is_active:
            return StepOutcome(state, self.mask_for(state))

        anchor = trigger_anchor(ctx)
        if anchor is None:
            return StepOutcome(state)

        provider_error = None
        try:
            suggestions = source.suggest(ctx, anchor)
        except ProviderError as e:
            if self.on_provider_failure is ProviderFailurePolicy.PROPAGATE:
                raise
            logger.warning("suggestion provider failed at offset %d, treating as empty: %s", anchor, e)
            suggestions = SuggestionSet()
            provider_error = str(e)

        new_state = on_trigger(suggestions, self.on_empty)
        logger.debug("trigger at %d: %d suggestions -> %s", anchor, len(suggestions), new_state.mode.value)
        mask = self.mask_for(new_state) if new_state.is_active else None
        return StepOutcome(new_state, mask, True, suggestions, provider_error, anchor)

    def update(self, state: MonitorState, token: bytes) -> MonitorState:
        return update(state, token, self.delims)
