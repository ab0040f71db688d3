"""
Suggestion providers: the static analysis behind the monitor.

A provider answers "which identifiers can be referenced through the receiver
ending at this position" for a document that has the partial generation
spliced in. Two providers exist: a fixture table for hermetic runs and a
language-server client (see ``lsp``).
"""

import json
import logging
import threading
from collections.abc import Iterable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol, Union
from urllib.parse import unquote, urlparse

from .errors import ConfigError, ProviderError
from .vocab import DEFAULT_DELIMITERS, DelimiterSet, SuggestionSet

logger = logging.getLogger(__name__)

# Completion item kinds that name a member: method, field, property, enum member, constant
MEMBER_COMPLETION_KINDS = frozenset({2, 5, 10, 20, 21})


@dataclass(frozen=True)
class Position:
    """Zero-based line and UTF-16 character column."""

    line: int
    character: int

    def to_dict(self) -> dict[str, int]:
        return {"line": self.line, "character": self.character}


def offset_to_position(text: str, offset: int) -> Position:
    """Convert a string index into a wire position (UTF-16 columns)."""
    if not 0 <= offset <= len(text):
        raise ValueError(f"offset {offset} outside text of length {len(text)}")
    line_start = text.rfind("\n", 0, offset) + 1
    line = text.count("\n", 0, offset)
    character = len(text[line_start:offset].encode("utf-16-le")) // 2
    return Position(line, character)


@dataclass(frozen=True)
class SuggestionQuery:
    """
    One analysis request.

    ``content`` is the whole document as the analysis should see it, with the
    generation spliced in; ``position`` sits just after the triggering '.'
    whose string index is ``anchor_offset``.
    """

    file_uri: str
    content: str
    position: Position
    anchor_offset: int

    def __post_init__(self) -> None:
        if not 0 <= self.anchor_offset < len(self.content):
            raise ValueError(f"anchor offset {self.anchor_offset} outside document of length {len(self.content)}")
        lines = self.content.split("\n")
        if self.position.line >= len(lines):
            raise ValueError(f"position line {self.position.line} past end of document ({len(lines)} lines)")
        width = len(lines[self.position.line].encode("utf-16-le")) // 2
        if not 0 <= self.position.character <= width:
            raise ValueError(f"position character {self.position.character} outside line of width {width}")

    @classmethod
    def at_cursor(cls, file_uri: str, content: str, anchor_offset: int, cursor: int) -> "SuggestionQuery":
        return cls(file_uri, content, offset_to_position(content, cursor), anchor_offset)


@dataclass
class ProviderConfig:
    """
    Which analysis to use and where.

    Args:
        kind: "fixture" or "lsp"
        server_launch: Language server command line (lsp)
        workspace_root: Repository directory (must exist for lsp)
        timeout_ms: Per-request timeout
        fixtures: Fixture table path (fixture)
    """

    kind: str = "fixture"
    server_launch: list[str] = field(default_factory=list)
    workspace_root: Optional[Path] = None
    timeout_ms: int = 10_000
    fixtures: Optional[Path] = None

    def __post_init__(self) -> None:
        if self.kind not in ("fixture", "lsp"):
            raise ConfigError(f"provider kind must be 'fixture' or 'lsp', got {self.kind!r}")
        if self.timeout_ms <= 0:
            raise ConfigError(f"provider timeout_ms must be positive, got {self.timeout_ms}")
        if self.workspace_root is not None:
            self.workspace_root = Path(self.workspace_root)
        if self.fixtures is not None:
            self.fixtures = Path(self.fixtures)
        if self.kind == "lsp":
            if not self.server_launch:
                raise ConfigError("lsp provider needs server_launch")
            if self.workspace_root is None or not self.workspace_root.is_dir():
                raise ConfigError(f"lsp provider workspace_root does not exist: {self.workspace_root}")
        if self.kind == "fixture" and self.fixtures is None:
            raise ConfigError("fixture provider needs a fixtures file")

    @property
    def timeout_s(self) -> float:
        return self.timeout_ms / 1000.0


class SuggestionProvider(Protocol):
    """Provider contract shared by the fixture table and the language-server client."""

    def open_document(self, file_uri: str, content: str) -> None: ...

    def query(self, q: SuggestionQuery) -> SuggestionSet: ...

    def close(self) -> None: ...


def completion_name(item: dict[str, Any]) -> Optional[str]:
    """Bare identifier of a completion item, or None if it does not name a member."""
    if item.get("kind") not in MEMBER_COMPLETION_KINDS:
        return None
    text = item.get("insertText") or item.get("label") or ""
    if not isinstance(text, str):
        return None
    for i, ch in enumerate(text):
        if ch == "(" or ch.isspace():
            text = text[:i]
            break
    return text or None


def completion_names(result: Any, delims: DelimiterSet = DEFAULT_DELIMITERS) -> list[str]:
    """
    Extract identifier names from a completion response.

    Accepts a bare item list or a completion list object. Names that still
    contain a delimiter after truncation are dropped.
    """
    if result is None:
        return []
    items = result.get("items", []) if isinstance(result, dict) else result
    if not isinstance(items, list):
        raise ProviderError(f"malformed completion result: {type(items).__name__}")
    names = []
    for item in items:
        if not isinstance(item, dict):
            continue
        name = completion_name(item)
        if name is None:
            continue
        if delims.contains_any(name.encode("utf-8")):
            logger.debug("dropping completion %r: contains a delimiter", name)
            continue
        names.append(name)
    return names


def uri_path(file_uri: str) -> str:
    """POSIX path of a file URI (or the input if it is already a path)."""
    parsed = urlparse(file_uri)
    if parsed.scheme == "file":
        return unquote(parsed.path)
    return file_uri


class FixtureProvider:
    """
    Suggestions read from a table keyed by (relative file path, '.' offset).

    A key matches a document whose path ends with the key's relative path;
    the longest matching path wins. Unknown keys answer the empty set.
    """

    def __init__(self, table: Iterable[tuple[str, int, Iterable[str]]]) -> None:
        self._by_offset: dict[int, list[tuple[str, SuggestionSet]]] = {}
        for file, offset, names in table:
            relpath = Path(file).as_posix()
            self._by_offset.setdefault(offset, []).append((relpath, SuggestionSet.from_names(names)))
        self._open: set[str] = set()
        self._lock = threading.Lock()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FixtureProvider":
        entries = data.get("suggestions")
        if not isinstance(entries, list):
            raise ProviderError('fixture table must hold a "suggestions" list')
        table = []
        for i, entry in enumerate(entries):
            try:
                file, offset, items = entry["file"], entry["offset"], entry["items"]
            except (KeyError, TypeError):
                raise ProviderError(f"fixture entry {i} needs file, offset and items") from None
            if not isinstance(offset, int) or not isinstance(items, list):
                raise ProviderError(f"fixture entry {i} has a non-integer offset or non-list items")
            table.append((str(file), offset, [str(name) for name in items]))
        return cls(table)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FixtureProvider":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ProviderError(f"cannot read fixture table {path}: {e}") from e
        provider = cls.from_dict(data)
        logger.info("loaded %d fixture suggestion entries from %s", len(provider), path)
        return provider

    def __len__(self) -> int:
        return sum(len(entries) for entries in self._by_offset.values())

    def open_document(self, file_uri: str, content: str) -> None:
        with self._lock:
            self._open.add(file_uri)

    def query(self, q: SuggestionQuery) -> SuggestionSet:
        with self._lock:
            if q.file_uri not in self._open:
                raise ProviderError(f"document not open: {q.file_uri}")
        path = uri_path(q.file_uri)
        best: Optional[tuple[str, SuggestionSet]] = None
        for relpath, suggestions in self._by_offset.get(q.anchor_offset, []):
            if path == relpath or path.endswith("/" + relpath):
                if best is None or len(relpath) > len(best[0]):
                    best = (relpath, suggestions)
        return best[1] if best else SuggestionSet()

    def close(self) -> None:
        with self._lock:
            self._open.clear()


def build_provider(config: ProviderConfig) -> SuggestionProvider:
    """Create the provider described by ``config``."""
    if config.kind == "fixture":
        if config.fixtures is None:
            raise ProviderError("fixture provider needs a fixtures file")
        return FixtureProvider.load(config.fixtures)
    from .lsp import LanguageServerProvider

    return LanguageServerProvider.launch(config)
