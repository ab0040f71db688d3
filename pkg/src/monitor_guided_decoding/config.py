"""
Run configuration: one TOML or JSON file mirroring :class:`RunConfig`.
"""

import hashlib
import json
import sys
from dataclasses import dataclass, field, fields, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

from .decode import DEFAULT_SCHEDULE, SamplerConfig
from .errors import ConfigError
from .lm import BackendConfig
from .monitor import EmptySuggestionPolicy, ProviderFailurePolicy
from .prompt import PromptPlan
from .suggest import ProviderConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


# Fields that do not change what a run computes
_UNHASHED_FIELDS = frozenset({"workers", "label"})

_SECTIONS = {"plan": PromptPlan, "backend": BackendConfig, "provider": ProviderConfig, "sampler": SamplerConfig}

_PATH_KEYS = {"backend": ("mock_table", "vocab"), "provider": ("fixtures", "workspace_root")}


@dataclass
class RunConfig:
    """
    Everything one evaluation run needs.

    ``n_trials`` is the schedule length; ``k_max`` defaults to it.
    """

    backend: BackendConfig
    provider: ProviderConfig
    plan: PromptPlan = field(default_factory=PromptPlan)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    schedule: list[float] = field(default_factory=lambda: list(DEFAULT_SCHEDULE))
    k_max: Optional[int] = None
    monitor_enabled: bool = True
    on_empty: EmptySuggestionPolicy = EmptySuggestionPolicy.ABANDON
    provider_failure: ProviderFailurePolicy = ProviderFailurePolicy.EMPTY
    seed: int = 0
    workers: int = 1
    build_command: Optional[Union[str, list[str]]] = None
    build_timeout_s: float = 600.0
    compare_baseline: bool = False
    complexity_vocabs: list[Path] = field(default_factory=list)
    label: str = ""

    def __post_init__(self) -> None:
        try:
            self.on_empty = EmptySuggestionPolicy(self.on_empty)
            self.provider_failure = ProviderFailurePolicy(self.provider_failure)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        self.schedule = [float(t) for t in self.schedule]
        if not self.schedule:
            raise ConfigError("schedule must hold at least one temperature")
        if any(t <= 0 for t in self.schedule):
            raise ConfigError(f"schedule temperatures must be positive, got {self.schedule}")
        if self.k_max is None:
            self.k_max = len(self.schedule)
        if not 1 <= self.k_max <= len(self.schedule):
            raise ConfigError(f"k_max must be in 1..{len(self.schedule)} (the number of trials), got {self.k_max}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.build_timeout_s <= 0:
            raise ConfigError(f"build_timeout_s must be positive, got {self.build_timeout_s}")
        self.complexity_vocabs = [Path(p) for p in self.complexity_vocabs]

    @property
    def n_trials(self) -> int:
        return len(self.schedule)

    @property
    def configurations(self) -> list[tuple[str, bool]]:
        """(label, monitor_enabled) of every configuration a run evaluates."""
        if self.compare_baseline:
            return [("mgd", True), ("baseline", False)]
        return [(self.label or ("mgd" if self.monitor_enabled else "baseline"), self.monitor_enabled)]


def _section(name: str, data: Any, base_dir: Path) -> Any:
    cls = _SECTIONS[name]
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    values = dict(data)
    for key in _PATH_KEYS.get(name, ()):
        if values.get(key) is not None:
            values[key] = base_dir / values[key]
    return cls(**values)


def config_from_dict(data: dict[str, Any], base_dir: Union[str, Path] = ".") -> RunConfig:
    """
    Build a RunConfig from parsed file contents.

    Relative paths are resolved against ``base_dir``.

    Raises:
        ConfigError: On unknown keys, missing sections or invalid values
    """
    base = Path(base_dir)
    top_level = {f.name for f in fields(RunConfig)} - set(_SECTIONS)
    unknown = sorted(set(data) - top_level - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    for required in ("backend", "provider"):
        if required not in data:
            raise ConfigError(f"configuration needs a [{required}] section")
    try:
        kwargs: dict[str, Any] = {name: _section(name, data[name], base) for name in _SECTIONS if name in data}
        kwargs.update({key: data[key] for key in top_level if key in data})
        if "complexity_vocabs" in kwargs:
            kwargs["complexity_vocabs"] = [base / p for p in kwargs["complexity_vocabs"]]
        return RunConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read a ``.toml`` or ``.json`` run configuration."""
    path = Path(path)
    if path.suffix not in (".toml", ".json"):
        raise ConfigError(f"configuration must be a .toml or .json file, got {path.name}")
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    try:
        data = tomllib.loads(raw.decode("utf-8")) if path.suffix == ".toml" else json.loads(raw)
    except (UnicodeDecodeError, ValueError) as e:
        raise ConfigError(f"cannot parse configuration {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"configuration {path} must hold an object")
    return config_from_dict(data, path.parent)


def apply_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Return ``config`` with top-level fields replaced; None values are ignored."""
    known = {f.name for f in fields(RunConfig)}
    changes = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"cannot override unknown field {key!r}")
        changes[key] = value
    if "schedule" in changes and "k_max" not in changes and (config.k_max or 0) > len(changes["schedule"]):
        changes["k_max"] = None
    return replace(config, **changes) if changes else config


def _plain(value: Any) -> Any:
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, Enum):
        return value.value
    if is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(config: RunConfig) -> dict[str, Any]:
    """JSON-ready view of ``config``."""
    data: dict[str, Any] = _plain(config)
    return data


def config_hash(config: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of every field that affects results."""
    data = {k: v for k, v in config_to_dict(config).items() if k not in _UNHASHED_FIELDS}
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def get_default_schedule() -> list[float]:
    """The six-trial temperature schedule."""
    return list(DEFAULT_SCHEDULE)


def get_default_run_config(backend: BackendConfig, provider: ProviderConfig) -> RunConfig:
    """Standard prompting, a 2048-token window with 512 generated tokens, six trials."""
    return RunConfig(
        backend=backend,
        provider=provider,
        plan=PromptPlan(total_context=2048, generation_budget=512),
        schedule=get_default_schedule(),
    )
