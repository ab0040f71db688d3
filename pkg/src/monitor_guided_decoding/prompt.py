"""
Prompt construction under a fixed token budget.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .errors import ConfigError, PromptError
from .lm import LanguageModelBackend
from .vocab import Vocabulary

if TYPE_CHECKING:
    from .harness import TestCase


class PromptStrategy(Enum):
    """Prompting strategies."""

    STANDARD = "standard"
    CLASS_EXPR_TYPES = "classExprTypes"
    FIM = "fim"
    FIM_CLASS_EXPR_TYPES = "fim_classExprTypes"

    @property
    def uses_aux(self) -> bool:
        return self in (PromptStrategy.CLASS_EXPR_TYPES, PromptStrategy.FIM_CLASS_EXPR_TYPES)

    @property
    def uses_fim(self) -> bool:
        return self in (PromptStrategy.FIM, PromptStrategy.FIM_CLASS_EXPR_TYPES)


FIM_SENTINELS = ("fim_prefix", "fim_suffix", "fim_middle")


@dataclass
class PromptPlan:
    """
    Strategy and budget split for one run.

    The prompt budget is ``total_context - generation_budget``. The aux quota
    is ``floor(aux_fraction * budget)`` and the suffix quota
    ``floor(suffix_fraction * budget)``; the prefix gets whatever the other
    segments leave unused. ``suffix_fraction`` defaults to 0.50 for plain FIM
    and 0.40 when FIM is combined with classExprTypes.
    """

    strategy: PromptStrategy = PromptStrategy.STANDARD
    total_context: int = 2048
    generation_budget: int = 512
    aux_fraction: float = 0.20
    suffix_fraction: Optional[float] = None

    def __post_init__(self) -> None:
        try:
            self.strategy = PromptStrategy(self.strategy)
        except ValueError:
            choices = ", ".join(s.value for s in PromptStrategy)
            raise ConfigError(f"unknown prompt strategy {self.strategy!r} (choose from {choices})") from None
        if self.suffix_fraction is None:
            if self.strategy is PromptStrategy.FIM:
                self.suffix_fraction = 0.50
            elif self.strategy is PromptStrategy.FIM_CLASS_EXPR_TYPES:
                self.suffix_fraction = 0.40
            else:
                self.suffix_fraction = 0.0
        if self.generation_budget <= 0:
            raise ConfigError(f"generation_budget must be positive, got {self.generation_budget}")
        if self.prompt_budget <= 0:
            raise ConfigError(
                f"total_context {self.total_context} leaves no prompt budget after "
                f"generation_budget {self.generation_budget}"
            )
        for name in ("aux_fraction", "suffix_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        active = (self.aux_fraction if self.strategy.uses_aux else 0.0) + (
            (self.suffix_fraction or 0.0) if self.strategy.uses_fim else 0.0
        )
        if active > 1.0:
            raise ConfigError(f"budget fractions for {self.strategy.value} sum to {active} > 1")

    @property
    def prompt_budget(self) -> int:
        return self.total_context - self.generation_budget

    @property
    def aux_quota(self) -> int:
        if not self.strategy.uses_aux:
            return 0
        return math.floor(self.aux_fraction * self.prompt_budget)

    @property
    def suffix_quota(self) -> int:
        if not self.strategy.uses_fim:
            return 0
        return math.floor((self.suffix_fraction or 0.0) * self.prompt_budget)


@dataclass(frozen=True)
class Prompt:
    """Prompt token ids with the length of each segment."""

    ids: list[int]
    strategy: PromptStrategy
    segments: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)


def _keep_last(ids: list[int], n: int) -> list[int]:
    return ids[len(ids) - n :] if n < len(ids) else ids


def _fim_sentinels(vocab: Vocabulary, strategy: PromptStrategy) -> tuple[int, int, int]:
    ids: list[int] = []
    missing: list[str] = []
    for role in FIM_SENTINELS:
        token_id = vocab.special_id(role)
        if token_id is None:
            missing.append(role)
        else:
            ids.append(token_id)
    if missing:
        raise PromptError(f"{strategy.value} prompt needs vocabulary special tokens: {', '.join(missing)}")
    return ids[0], ids[1], ids[2]


def build_prompt(plan: PromptPlan, case: "TestCase", backend: LanguageModelBackend) -> Prompt:
    """
    Build the prompt for ``case`` under ``plan``.

    Prefix and aux text are truncated from the left, the FIM suffix from the
    right. The three FIM sentinels are charged to the prefix share, so the
    prompt never exceeds the budget.

    Raises:
        PromptError: If the strategy needs a field the case lacks or the
            vocabulary lacks the FIM sentinels
    """
    strategy = PromptStrategy(plan.strategy)
    budget = plan.prompt_budget

    aux_ids: list[int] = []
    if strategy.uses_aux:
        aux_text = case.class_expr_type_text()
        if aux_text is None:
            raise PromptError(f"{strategy.value} prompt needs field 'class_expr_type_files'")
        aux_ids = _keep_last(backend.tokenize(aux_text), plan.aux_quota)

    if not strategy.uses_fim:
        prefix_ids = _keep_last(backend.tokenize(case.prefix), budget - len(aux_ids))
        return Prompt(aux_ids + prefix_ids, strategy, {"aux": len(aux_ids), "prefix": len(prefix_ids)})

    if case.suffix is None:
        raise PromptError(f"{strategy.value} prompt needs field 'suffix'")
    prefix_marker, suffix_marker, middle_marker = _fim_sentinels(backend.vocab, strategy)

    suffix_ids = backend.tokenize(case.suffix)[: plan.suffix_quota]
    room = budget - len(FIM_SENTINELS) - len(aux_ids) - len(suffix_ids)
    if room <= 0:
        raise PromptError(f"prompt budget {budget} leaves no room for the prefix in a {strategy.value} prompt")
    prefix_ids = _keep_last(backend.tokenize(case.prefix), room)
    ids = [prefix_marker, *aux_ids, *prefix_ids, suffix_marker, *suffix_ids, middle_marker]
    segments = {"aux": len(aux_ids), "prefix": len(prefix_ids), "suffix": len(suffix_ids), "sentinels": 3}
    return Prompt(ids, strategy, segments)
