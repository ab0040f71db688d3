"""
LM vocabulary, identifier delimiters, suggestion sets and mask generation.

Token strings are byte sequences and all matching is byte-wise, as the
vocabularies of real code models are byte-level.
"""

import hashlib
import json
import logging
import string
from bisect import bisect_left
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import numpy as np

from .errors import MaskError, VocabularyError

logger = logging.getLogger(__name__)

IDENTIFIER_CONTINUE = string.ascii_letters + string.digits + "_$"
IDENTIFIER_CONTINUE_BYTES = IDENTIFIER_CONTINUE.encode("ascii")

SPECIAL_TOKEN_ROLES = ("fim_prefix", "fim_suffix", "fim_middle", "eos")


@dataclass(frozen=True)
class DelimiterSet:
    """
    The set E of bytes that terminate an identifier.

    With ``members`` left as None the set is the complement of the Java
    identifier-continue characters ``[A-Za-z0-9_$]``. An explicit set may be
    given instead; it must be non-empty and hold no identifier character.
    """

    members: Optional[frozenset[int]] = None

    def __post_init__(self) -> None:
        if self.members is None:
            return
        if not self.members:
            raise ValueError("delimiter set must not be empty")
        clashes = sorted(chr(b) for b in self.members if b in IDENTIFIER_CONTINUE_BYTES)
        if clashes:
            raise ValueError(f"delimiter set contains identifier characters: {''.join(clashes)}")

    @classmethod
    def from_chars(cls, chars: Iterable[str]) -> "DelimiterSet":
        """Build an explicit delimiter set from characters (each contributes its UTF-8 bytes)."""
        return cls(frozenset(b for ch in chars for b in ch.encode("utf-8")))

    def is_delimiter(self, byte: int) -> bool:
        if self.members is None:
            return byte not in IDENTIFIER_CONTINUE_BYTES
        return byte in self.members

    def contains_any(self, data: bytes) -> bool:
        """True if any byte of ``data`` is a delimiter."""
        if self.members is None:
            return bool(data.translate(None, IDENTIFIER_CONTINUE_BYTES))
        return any(b in self.members for b in data)

    def __contains__(self, item: Union[str, int]) -> bool:
        if isinstance(item, int):
            return self.is_delimiter(item)
        encoded = item.encode("utf-8")
        return len(encoded) > 0 and all(self.is_delimiter(b) for b in encoded)


DEFAULT_DELIMITERS = DelimiterSet()


@dataclass(frozen=True)
class SuggestionSet:
    """
    Residual identifier suggestions held by an active monitor.

    Residuals are UTF-8 bytes. The empty residual (epsilon) means a suggestion
    has been fully consumed and only a delimiter may follow.
    """

    residuals: frozenset[bytes] = field(default_factory=frozenset)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "SuggestionSet":
        """Build a set from analysis output; empty names are dropped."""
        residuals = set()
        for name in names:
            if not name:
                logger.debug("dropping empty suggestion name")
                continue
            residuals.add(name.encode("utf-8"))
        return cls(frozenset(residuals))

    def advance(self, token: bytes) -> "SuggestionSet":
        """Keep residuals prefixed by ``token`` and strip that prefix."""
        return SuggestionSet(frozenset(w[len(token) :] for w in self.residuals if w.startswith(token)))

    def names(self) -> list[str]:
        """Residuals decoded for display, sorted."""
        return sorted(w.decode("utf-8", errors="replace") for w in self.residuals)

    @property
    def has_epsilon(self) -> bool:
        return b"" in self.residuals

    def __len__(self) -> int:
        return len(self.residuals)

    def __bool__(self) -> bool:
        return bool(self.residuals)

    def __iter__(self) -> Iterator[bytes]:
        return iter(sorted(self.residuals))


@dataclass(frozen=True, eq=False)
class Mask:
    """Per-token admissibility bits, one per vocabulary id."""

    bits: np.ndarray

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    def __getitem__(self, token_id: int) -> bool:
        return bool(self.bits[token_id])

    def allowed_ids(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.bits)]

    def any(self) -> bool:
        return bool(self.bits.any())

    def digest(self) -> str:
        """Short stable hash of the bit vector, used in event logs."""
        payload = len(self).to_bytes(8, "little") + np.packbits(self.bits).tobytes()
        return hashlib.sha256(payload).hexdigest()[:16]


class Vocabulary:
    """
    The LM's token table V.

    Args:
        tokens: Token byte strings indexed by token id
        special: Role name -> token id for sentinel/end-of-sequence tokens
    """

    def __init__(self, tokens: Sequence[bytes], special: Optional[Mapping[str, int]] = None) -> None:
        if not tokens:
            raise VocabularyError("vocabulary is empty")
        index: dict[bytes, int] = {}
        for token_id, token in enumerate(tokens):
            if not token:
                raise VocabularyError(f"token {token_id} is empty")
            if token in index:
                raise VocabularyError(f"token {token_id} duplicates token {index[token]}: {token!r}")
            index[token] = token_id
        self._tokens = tuple(bytes(t) for t in tokens)
        self._index = index

        self._special: dict[str, int] = {}
        for role, token_id in (special or {}).items():
            if role not in SPECIAL_TOKEN_ROLES:
                raise VocabularyError(f"unknown special token role {role!r}")
            if not 0 <= token_id < len(self._tokens):
                raise VocabularyError(f"special token {role} id {token_id} out of range")
            self._special[role] = token_id
        special_ids = set(self._special.values())

        # Text tokens only: specials are never produced by encoding nor admitted by masks.
        self._text_index = {tok: tid for tok, tid in index.items() if tid not in special_ids}
        entries = sorted(self._text_index.items())
        self._sorted_tokens = [tok for tok, _ in entries]
        self._sorted_ids = [tid for _, tid in entries]
        self._max_len = max(len(t) for t in self._text_index) if self._text_index else 0

    @classmethod
    def from_strings(
        cls, tokens: Sequence[str], special: Optional[Mapping[str, int]] = None, encoding: str = "utf-8"
    ) -> "Vocabulary":
        """Build a vocabulary from token strings in the given encoding."""
        try:
            return cls([t.encode(encoding) for t in tokens], special)
        except UnicodeEncodeError as e:
            raise VocabularyError(f"token not representable in {encoding}: {e}") from e

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Vocabulary":
        tokens = data.get("tokens")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise VocabularyError('vocabulary must hold a "tokens" list of strings')
        encoding = data.get("encoding", "utf-8")
        if encoding not in ("utf-8", "latin-1"):
            raise VocabularyError(f"unsupported vocabulary encoding {encoding!r}")
        return cls.from_strings(tokens, data.get("special"), encoding=encoding)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        """Load a vocabulary JSON file (``{"tokens": [...]}``)."""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise VocabularyError(f"cannot read vocabulary {path}: {e}") from e
        vocab = cls.from_dict(data)
        logger.info("loaded vocabulary of %d tokens from %s", vocab.size, path)
        return vocab

    def to_dict(self) -> dict[str, Any]:
        return {
            "tokens": [t.decode("latin-1") for t in self._tokens],
            "special": dict(self._special),
            "encoding": "latin-1",
        }

    @property
    def size(self) -> int:
        return len(self._tokens)

    @property
    def tokens(self) -> tuple[bytes, ...]:
        return self._tokens

    @property
    def special(self) -> dict[str, int]:
        return dict(self._special)

    @property
    def eos_id(self) -> Optional[int]:
        return self._special.get("eos")

    def special_id(self, role: str) -> Optional[int]:
        return self._special.get(role)

    def is_special(self, token_id: int) -> bool:
        return token_id in self._special.values()

    def token_bytes(self, token_id: int) -> bytes:
        if not 0 <= token_id < len(self._tokens):
            raise VocabularyError(f"token id {token_id} out of range 0..{len(self._tokens) - 1}")
        return self._tokens[token_id]

    def token_text(self, token_id: int) -> str:
        return self.token_bytes(token_id).decode("utf-8", errors="replace")

    def token_id(self, token: Union[str, bytes]) -> int:
        key = token.encode("utf-8") if isinstance(token, str) else token
        try:
            return self._index[key]
        except KeyError:
            raise VocabularyError(f"token {token!r} not in vocabulary") from None

    def lookup(self, token: bytes) -> Optional[int]:
        """Id of a non-special token with exactly these bytes, if any."""
        return self._text_index.get(token)

    def entries_with_prefix(self, prefix: bytes) -> Iterator[tuple[bytes, int]]:
        """Non-special (token, id) pairs whose bytes start with ``prefix``."""
        i = bisect_left(self._sorted_tokens, prefix)
        while i < len(self._sorted_tokens) and self._sorted_tokens[i].startswith(prefix):
            yield self._sorted_tokens[i], self._sorted_ids[i]
            i += 1

    def tokenize_greedy(self, text: str) -> list[int]:
        """Leftmost-longest encoding of ``text`` over the non-special tokens."""
        data = text.encode("utf-8")
        ids: list[int] = []
        pos = 0
        while pos < len(data):
            for length in range(min(self._max_len, len(data) - pos), 0, -1):
                token_id = self._text_index.get(data[pos : pos + length])
                if token_id is not None:
                    ids.append(token_id)
                    pos += length
                    break
            else:
                raise VocabularyError(f"cannot encode byte 0x{data[pos]:02x} at offset {pos}")
        return ids

    def detokenize_bytes(self, ids: Iterable[int]) -> bytes:
        return b"".join(self.token_bytes(i) for i in ids)

    def detokenize(self, ids: Iterable[int]) -> str:
        return self.detokenize_bytes(ids).decode("utf-8", errors="replace")


def tokenize_greedy(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.tokenize_greedy(text)


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    return vocab.detokenize(ids)


class MaskEntry(NamedTuple):
    """Why a token was admitted: ``rule`` is "prefix" or "delimited"."""

    token_id: int
    token: bytes
    rule: str
    residual: bytes


def _admissions(state: SuggestionSet, vocab: Vocabulary, delims: DelimiterSet) -> Iterator[MaskEntry]:
    if not state:
        raise MaskError("exhausted suggestions")
    for w in sorted(state.residuals):
        # t is a non-empty prefix of w
        for end in range(1, len(w) + 1):
            token_id = vocab.lookup(w[:end])
            if token_id is not None:
                yield MaskEntry(token_id, w[:end], "prefix", w)
        # t matches w . E . Sigma*
        n = len(w)
        for token, token_id in vocab.entries_with_prefix(w):
            if len(token) > n and delims.is_delimiter(token[n]):
                yield MaskEntry(token_id, token, "delimited", w)


def maskgen(state: SuggestionSet, vocab: Vocabulary, delims: DelimiterSet = DEFAULT_DELIMITERS) -> Mask:
    """
    Compute the mask of tokens consistent with the residual suggestions.

    A token is admitted if it is a non-empty prefix of some residual ``w`` or
    if it is ``w`` followed by a delimiter and then anything.

    Raises:
        MaskError: If ``state`` is empty
    """
    bits = np.zeros(vocab.size, dtype=bool)
    for entry in _admissions(state, vocab, delims):
        bits[entry.token_id] = True
    return Mask(bits)


def explain_mask(
    state: SuggestionSet, vocab: Vocabulary, delims: DelimiterSet = DEFAULT_DELIMITERS
) -> list[MaskEntry]:
    """Admitted tokens with the first rule and residual that admitted each, by token id."""
    seen: dict[int, MaskEntry] = {}
    for entry in _admissions(state, vocab, delims):
        seen.setdefault(entry.token_id, entry)
    return [seen[token_id] for token_id in sorted(seen)]
