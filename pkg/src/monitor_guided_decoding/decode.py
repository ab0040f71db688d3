"""
Decoding: masking, nucleus sampling and the monitored generation loop.
"""

import hashlib
import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Any, Optional, Union

import numpy as np

from .errors import ConfigError, DecodeError, MgdError, MonitorError
from .javalex import method_close_offset
from .lm import LanguageModelBackend
from .monitor import (
    EmptySuggestionPolicy,
    MonitorState,
    ProviderFailurePolicy,
    TriggerContext,
    TypeConsistencyMonitor,
    on_trigger,
    update,
)
from .prompt import PromptPlan, build_prompt
from .suggest import SuggestionProvider, SuggestionQuery
from .vocab import DEFAULT_DELIMITERS, DelimiterSet, Mask, SuggestionSet, Vocabulary, maskgen

if TYPE_CHECKING:
    from .harness import TestCase

logger = logging.getLogger(__name__)

MAX_PENALTY = float(np.finfo(np.float64).max)

DEFAULT_SCHEDULE = (0.2, 0.4, 0.6, 0.6, 0.8, 0.8)

# Slack for the cumulative-mass comparison; sums of rounded probabilities may fall short of top_p.
_TOP_P_EPSILON = 1e-12


@dataclass(frozen=True)
class SamplerConfig:
    """
    Nucleus sampling parameters.

    ``mask_penalty_K`` is the value subtracted for masked tokens; the default
    is the largest finite float, so masked entries never reach the support.
    """

    top_p: float = 0.95
    temperature: float = 1.0
    seed: int = 0
    mask_penalty_K: float = MAX_PENALTY

    def __post_init__(self) -> None:
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if not self.temperature > 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not self.mask_penalty_K > 0.0:
            raise ConfigError(f"mask_penalty_K must be positive, got {self.mask_penalty_K}")


def apply_mask(logits: np.ndarray, mask: Union[Mask, np.ndarray], penalty: float = MAX_PENALTY) -> np.ndarray:
    """
    Combine logits with a mask: masked entries become ``-penalty``.

    Raises:
        DecodeError: On a length mismatch or a mask that admits nothing
    """
    bits = mask.bits if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != bits.shape:
        raise DecodeError(f"logit vector of length {logits.shape[0]} does not match mask of length {bits.shape[0]}")
    if not bits.any():
        raise DecodeError("empty mask")
    return np.where(bits, logits, -penalty)


def nucleus_distribution(
    logits: np.ndarray, top_p: float = 0.95, temperature: float = 1.0, penalty: float = MAX_PENALTY
) -> tuple[np.ndarray, np.ndarray]:
    """
    The truncated, renormalized sampling distribution.

    Tokens are ordered by descending probability, ties by ascending id; the
    smallest prefix whose cumulative mass reaches ``top_p`` is kept.

    Returns:
        (token ids, probabilities), both in nucleus order

    Raises:
        DecodeError: If no token is unmasked ("empty support")
    """
    logits = np.asarray(logits, dtype=np.float64)
    candidates = np.flatnonzero(np.isfinite(logits) & (logits > -penalty))
    if candidates.size == 0:
        raise DecodeError("empty support")
    scaled = logits[candidates] / temperature
    scaled -= scaled.max()
    weights = np.exp(scaled)
    probs = weights / weights.sum()

    order = np.lexsort((candidates, -probs))
    ids, probs = candidates[order], probs[order]
    cumulative = np.cumsum(probs)
    cut = min(int(np.searchsorted(cumulative, top_p - _TOP_P_EPSILON, side="left")) + 1, ids.size)
    kept = probs[:cut]
    return ids[:cut], kept / kept.sum()


def nucleus_sample(logits: np.ndarray, cfg: SamplerConfig, rng: np.random.Generator) -> int:
    """Draw one token id by nucleus sampling."""
    ids, probs = nucleus_distribution(logits, cfg.top_p, cfg.temperature, cfg.mask_penalty_K)
    if ids.size == 1:
        return int(ids[0])
    return int(ids[rng.choice(ids.size, p=probs)])


def trial_seed(base_seed: int, case_id: str, trial_index: int) -> int:
    """Stable 64-bit seed for one trial."""
    digest = hashlib.blake2b(f"{base_seed}:{case_id}:{trial_index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class StopReason(Enum):
    """Why a generation ended."""

    METHOD_CLOSE = "method_close"
    BUDGET = "budget"
    ABANDONED = "abandoned"
    EOS = "eos"
    ERROR = "error"


@dataclass
class MonitorEvent:
    """
    One decoding step as the monitor saw it.

    ``state`` is the monitor state the token was sampled under and
    ``next_state`` the state after the update. ``token_id`` is None when the
    step aborted before sampling.
    """

    step: int
    triggered: bool = False
    anchor: Optional[int] = None
    suggestions: Optional[list[str]] = None
    provider_error: Optional[str] = None
    mask_digest: Optional[str] = None
    token_id: Optional[int] = None
    token: Optional[str] = None
    state: dict[str, Any] = field(default_factory=dict)
    next_state: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MonitorEvent":
        return cls(**data)


@dataclass
class GenerationRecord:
    """Everything one trial produced, enough to replay the monitor."""

    case_id: str
    trial_index: int
    temperature: float
    seed: int
    monitor_enabled: bool
    on_empty: str = EmptySuggestionPolicy.ABANDON.value
    prompt_tokens: int = 0
    token_ids: list[int] = field(default_factory=list)
    text: str = ""
    events: list[MonitorEvent] = field(default_factory=list)
    final_state: dict[str, Any] = field(default_factory=lambda: MonitorState.wait().describe())
    stop_reason: StopReason = StopReason.BUDGET
    error: Optional[str] = None
    wall_time_ms: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["stop_reason"] = self.stop_reason.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "GenerationRecord":
        data = dict(data)
        data["stop_reason"] = StopReason(data["stop_reason"])
        data["events"] = [MonitorEvent.from_dict(e) for e in data.get("events", [])]
        return cls(**data)

    @property
    def generated_tokens(self) -> int:
        return len(self.token_ids)

    def post_trigger_identifiers(self) -> list[tuple[str, list[str]]]:
        """(identifier, suggestions at its trigger) for every identifier completed under a mask."""
        return [(name, suggestions) for name, suggestions, _ in _trace_identifiers(self.events, None)]


class DocumentSuggestionSource:
    """
    Feeds the monitor's queries to a provider with the generation spliced in.

    The analysed document is the case prefix, the generation so far and the
    case suffix. The document is (re)opened before every query.
    """

    def __init__(self, provider: SuggestionProvider, case: "TestCase") -> None:
        self.provider = provider
        self.file_uri = case.file_uri
        self.tail = case.suffix or ""

    def suggest(self, ctx: TriggerContext, anchor: int) -> SuggestionSet:
        head = ctx.frontier_text
        content = head + self.tail
        self.provider.open_document(self.file_uri, content)
        return self.provider.query(SuggestionQuery.at_cursor(self.file_uri, content, anchor, len(head)))


class Decoder:
    """
    Monitored sampling of method completions.

    Args:
        backend: The LM
        provider: Suggestion provider shared by all generations
        plan: Prompt strategy and budgets
        sampler: Sampling defaults; temperature and seed are set per trial
        monitor_enabled: Run with or without the monitor
        on_empty: Empty-suggestion policy
        provider_failure: Provider-failure policy
        delims: Identifier delimiters
    """

    def __init__(
        self,
        backend: LanguageModelBackend,
        provider: SuggestionProvider,
        plan: Optional[PromptPlan] = None,
        sampler: Optional[SamplerConfig] = None,
        monitor_enabled: bool = True,
        on_empty: EmptySuggestionPolicy = EmptySuggestionPolicy.ABANDON,
        provider_failure: ProviderFailurePolicy = ProviderFailurePolicy.EMPTY,
        delims: DelimiterSet = DEFAULT_DELIMITERS,
    ) -> None:
        self.backend = backend
        self.vocab = backend.vocab
        self.provider = provider
        self.plan = plan or PromptPlan()
        self.sampler = sampler or SamplerConfig()
        self.monitor_enabled = monitor_enabled
        self.on_empty = on_empty
        self.monitor = TypeConsistencyMonitor(self.vocab, delims, on_empty, provider_failure)

    def generate(
        self, case: "TestCase", trial_index: int = 0, temperature: Optional[float] = None, seed: Optional[int] = None
    ) -> GenerationRecord:
        """Sample one completion; failures end up in the record, never raised."""
        cfg = replace(
            self.sampler,
            temperature=self.sampler.temperature if temperature is None else temperature,
            seed=self.sampler.seed if seed is None else seed,
        )
        record = GenerationRecord(
            case.case_id, trial_index, cfg.temperature, cfg.seed, self.monitor_enabled, self.on_empty.value
        )
        start = time.perf_counter()
        try:
            self._run(case, cfg, record)
        except MgdError as e:
            logger.warning("generation for %s trial %d failed: %s", case.case_id, trial_index, e)
            record.stop_reason = StopReason.ERROR
            record.error = f"{type(e).__name__}: {e}"
        record.text = self.vocab.detokenize(t for t in record.token_ids if t != self.vocab.eos_id)
        record.wall_time_ms = (time.perf_counter() - start) * 1000.0
        logger.debug(
            "%s trial %d: %d tokens, stop %s",
            case.case_id,
            trial_index,
            len(record.token_ids),
            record.stop_reason.value,
        )
        return record

    def _run(self, case: "TestCase", cfg: SamplerConfig, record: GenerationRecord) -> None:
        rng = np.random.default_rng(cfg.seed)
        prompt = build_prompt(self.plan, case, self.backend)
        record.prompt_tokens = len(prompt)
        source = DocumentSuggestionSource(self.provider, case)
        eos = self.vocab.eos_id
        state = self.monitor.initial_state()
        generated = b""

        for step in range(self.plan.generation_budget):
            event = MonitorEvent(step)
            mask: Optional[Mask] = None
            if self.monitor_enabled:
                ctx = TriggerContext(case.prefix + generated.decode("utf-8", errors="replace"))
                outcome = self.monitor.step(state, ctx, source)
                state, mask = outcome.state, outcome.mask
                if outcome.triggered:
                    event.triggered = True
                    event.anchor = outcome.anchor
                    event.suggestions = outcome.suggestions.names() if outcome.suggestions is not None else []
                    event.provider_error = outcome.provider_error
                if outcome.abort:
                    event.state = event.next_state = state.describe()
                    record.events.append(event)
                    record.stop_reason = StopReason.ABANDONED
                    break
            event.state = state.describe()

            allowed = mask.allowed_ids() if mask is not None else None
            logits = self.backend.logits(prompt.ids + record.token_ids, allowed)
            if mask is not None:
                event.mask_digest = mask.digest()
                logits = apply_mask(logits, mask, cfg.mask_penalty_K)
            token_id = nucleus_sample(logits, cfg, rng)
            token = self.vocab.token_bytes(token_id)
            if state.is_active:
                state = self.monitor.update(state, token)
            event.token_id = token_id
            event.token = token.decode("utf-8", errors="replace")
            event.next_state = state.describe()
            record.events.append(event)
            record.token_ids.append(token_id)

            if token_id == eos:
                record.stop_reason = StopReason.EOS
                break
            generated += token
            if method_close_offset(generated.decode("utf-8", errors="replace"), case.open_depth) is not None:
                record.stop_reason = StopReason.METHOD_CLOSE
                break
        record.final_state = state.describe()

    def run_trials(
        self,
        case: "TestCase",
        schedule: Sequence[float] = DEFAULT_SCHEDULE,
        base_seed: int = 0,
        workers: int = 1,
        trial_indices: Optional[Sequence[int]] = None,
    ) -> list[GenerationRecord]:
        """
        One record per schedule entry, in trial order.

        Trials are independent: each has its own monitor state and a seed
        derived from (base_seed, case id, trial index).
        """
        if not schedule:
            raise ConfigError("temperature schedule must not be empty")
        indices = list(range(len(schedule))) if trial_indices is None else list(trial_indices)

        def one(i: int) -> GenerationRecord:
            return self.generate(case, i, schedule[i], trial_seed(base_seed, case.case_id, i))

        if workers <= 1:
            return [one(i) for i in indices]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, indices))


def generate(
    case: "TestCase",
    plan: PromptPlan,
    backend: LanguageModelBackend,
    monitor_enabled: bool,
    provider: SuggestionProvider,
    cfg: SamplerConfig,
    on_empty: EmptySuggestionPolicy = EmptySuggestionPolicy.ABANDON,
) -> GenerationRecord:
    """Sample one completion for ``case`` with ``cfg``'s temperature and seed."""
    return Decoder(backend, provider, plan, cfg, monitor_enabled, on_empty).generate(case)


def run_trials(
    case: "TestCase",
    plan: PromptPlan,
    backend: LanguageModelBackend,
    provider: SuggestionProvider,
    schedule: Sequence[float] = DEFAULT_SCHEDULE,
    monitor_enabled: bool = True,
    sampler: Optional[SamplerConfig] = None,
    base_seed: int = 0,
    workers: int = 1,
) -> list[GenerationRecord]:
    decoder = Decoder(backend, provider, plan, sampler, monitor_enabled)
    return decoder.run_trials(case, schedule, base_seed, workers)


@dataclass
class ReplayReport:
    """Outcome of replaying a record's event log."""

    final_state_matches: bool = True
    state_mismatches: list[int] = field(default_factory=list)
    mask_violations: list[int] = field(default_factory=list)
    digest_mismatches: list[int] = field(default_factory=list)
    identifiers: list[tuple[str, list[str]]] = field(default_factory=list)
    out_of_set: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            self.final_state_matches
            and not self.state_mismatches
            and not self.mask_violations
            and not self.digest_mismatches
            and not self.out_of_set
        )


def _identifier_part(data: bytes, delims: DelimiterSet) -> bytes:
    for i, byte in enumerate(data):
        if delims.is_delimiter(byte):
            return data[:i]
    return data


def _trace_identifiers(
    events: Sequence[MonitorEvent], delims: Optional[DelimiterSet]
) -> list[tuple[str, list[str], int]]:
    delims = delims or DEFAULT_DELIMITERS
    found = []
    pending: Optional[tuple[bytes, list[str]]] = None
    for event in events:
        if event.triggered and event.state.get("mode") == "active":
            pending = (b"", event.suggestions or [])
        if pending is None or event.token is None:
            continue
        spelled = pending[0] + event.token.encode("utf-8")
        if event.next_state.get("mode") == "active":
            pending = (spelled, pending[1])
            continue
        name = _identifier_part(spelled, delims).decode("utf-8", errors="replace")
        found.append((name, pending[1], event.step))
        pending = None
    return found


def replay_record(
    record: GenerationRecord, vocab: Vocabulary, delims: DelimiterSet = DEFAULT_DELIMITERS
) -> ReplayReport:
    """
    Rebuild the monitor trajectory from a record's event log alone.

    Checks that each step starts in the logged state, that every token sampled
    under a mask had its bit set (recomputing the mask from the residuals),
    that every identifier completed after a trigger belongs to the suggestions
    logged there, and that the trajectory ends in the recorded final state.
    """
    report = ReplayReport()
    if not record.monitor_enabled:
        return report
    policy = EmptySuggestionPolicy(record.on_empty)
    state = MonitorState.wait()
    for event in record.events:
        if event.triggered:
            state = on_trigger(SuggestionSet.from_names(event.suggestions or []), policy)
        if state.describe() != event.state:
            report.state_mismatches.append(event.step)
        if state.is_abandoned or event.token_id is None:
            continue
        if state.is_active:
            mask = maskgen(state.residuals, vocab, delims)
            if event.mask_digest is not None and mask.digest() != event.mask_digest:
                report.digest_mismatches.append(event.step)
            if not mask[event.token_id]:
                report.mask_violations.append(event.step)
            try:
                state = update(state, vocab.token_bytes(event.token_id), delims)
            except MonitorError:
                report.mask_violations.append(event.step)
                state = MonitorState.wait()
    report.final_state_matches = state.describe() == record.final_state

    for name, suggestions, _ in _trace_identifiers(record.events, delims):
        report.identifiers.append((name, suggestions))
        if name not in suggestions:
            report.out_of_set.append(name)
    return report
