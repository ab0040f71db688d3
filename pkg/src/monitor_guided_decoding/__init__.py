"""
Monitor-Guided Decoding

Static-analysis-driven logit masking for code language models: a monitor
watches the generation, queries a suggestion provider at every object
dereference and masks the vocabulary to type-consistent identifiers.
Includes the evaluation harness (NIM, ISM, PM, CR and score@k).
"""

__version__ = "0.1.0"
__author__ = "MGD Maintainers"
__email__ = "dev@mgd.invalid"

from .config import (
    RunConfig,
    apply_overrides,
    config_hash,
    get_default_run_config,
    get_default_schedule,
    load_config,
)
from .decode import (
    DEFAULT_SCHEDULE,
    Decoder,
    GenerationRecord,
    MonitorEvent,
    SamplerConfig,
    StopReason,
    apply_mask,
    generate,
    nucleus_distribution,
    nucleus_sample,
    replay_record,
    run_trials,
)
from .errors import (
    BackendError,
    ConfigError,
    DatasetError,
    DecodeError,
    MaskError,
    MgdError,
    MonitorError,
    PromptError,
    ProviderError,
    ProviderTimeout,
    VocabularyError,
)
from .harness import TestCase, derive_cases, load_dataset, run
from .javalex import JavaToken, TokenKind, identifiers, lex, method_close_offset
from .lm import BackendConfig, MockBackend, MockModel, RemoteBackend, build_backend
from .metrics import (
    ComplexityBucket,
    MetricReport,
    TrialScores,
    build_report,
    cr,
    identifier_complexity,
    ism,
    nim,
    pm,
    score_at_k,
)
from .monitor import (
    EmptySuggestionPolicy,
    MonitorMode,
    MonitorState,
    ProviderFailurePolicy,
    TriggerContext,
    TypeConsistencyMonitor,
    on_trigger,
    pre_trigger,
    update,
)
from .prompt import Prompt, PromptPlan, PromptStrategy, build_prompt
from .suggest import FixtureProvider, ProviderConfig, SuggestionProvider, SuggestionQuery, build_provider
from .vocab import (
    DEFAULT_DELIMITERS,
    DelimiterSet,
    Mask,
    SuggestionSet,
    Vocabulary,
    detokenize,
    explain_mask,
    maskgen,
    tokenize_greedy,
)

# Logit server (optional import)
try:
    from .server import add_logit_routes, create_logit_app

    _server_available = True
except ImportError:
    # Define dummy variables to avoid F401 errors
    add_logit_routes = None  # type: ignore
    create_logit_app = None  # type: ignore
    _server_available = False

__all__ = [
    "BackendConfig",
    "BackendError",
    "ComplexityBucket",
    "ConfigError",
    "DEFAULT_DELIMITERS",
    "DEFAULT_SCHEDULE",
    "DatasetError",
    "DecodeError",
    "Decoder",
    "DelimiterSet",
    "EmptySuggestionPolicy",
    "FixtureProvider",
    "GenerationRecord",
    "JavaToken",
    "Mask",
    "MaskError",
    "MetricReport",
    "MgdError",
    "MockBackend",
    "MockModel",
    "MonitorError",
    "MonitorEvent",
    "MonitorMode",
    "MonitorState",
    "Prompt",
    "PromptError",
    "PromptPlan",
    "PromptStrategy",
    "ProviderConfig",
    "ProviderError",
    "ProviderFailurePolicy",
    "ProviderTimeout",
    "RemoteBackend",
    "RunConfig",
    "SamplerConfig",
    "StopReason",
    "SuggestionProvider",
    "SuggestionQuery",
    "SuggestionSet",
    "TestCase",
    "TokenKind",
    "TrialScores",
    "TriggerContext",
    "TypeConsistencyMonitor",
    "VocabularyError",
    "Vocabulary",
    "apply_mask",
    "apply_overrides",
    "build_backend",
    "build_prompt",
    "build_provider",
    "build_report",
    "config_hash",
    "cr",
    "derive_cases",
    "detokenize",
    "explain_mask",
    "generate",
    "get_default_run_config",
    "get_default_schedule",
    "identifier_complexity",
    "identifiers",
    "ism",
    "lex",
    "load_config",
    "load_dataset",
    "maskgen",
    "method_close_offset",
    "nim",
    "nucleus_distribution",
    "nucleus_sample",
    "on_trigger",
    "pm",
    "pre_trigger",
    "replay_record",
    "run",
    "run_trials",
    "score_at_k",
    "tokenize_greedy",
    "update",
]

# Add the logit server to exports if available
if _server_available:
    __all__.extend(["add_logit_routes", "create_logit_app"])
