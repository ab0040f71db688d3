"""
Language-model backends.

A backend maps a token id context to one finite logit per vocabulary entry.
The mock backend is a pure function of the context and a scripted table; the
remote backend talks to a logit server over HTTP.
"""

import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Protocol, Union

import httpx
import numpy as np

from .errors import BackendError, ConfigError, VocabularyError
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

# Entries a sparse remote response leaves out get this value; it equals the masking penalty.
MASKED_LOGIT = -float(np.finfo(np.float64).max)


@dataclass
class BackendConfig:
    """
    Which LM to use.

    Args:
        kind: "mock" or "remote"
        endpoint: Logit server base URL (remote)
        mock_table: Mock model definition file (mock)
        hallucination_bias: Weight multiplier for scripted hallucinations (mock)
        vocab: Vocabulary file shared by the backend and the monitor
        timeout_s: HTTP timeout (remote)
    """

    kind: str = "mock"
    endpoint: Optional[str] = None
    mock_table: Optional[Path] = None
    hallucination_bias: float = 0.0
    vocab: Optional[Path] = None
    timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ConfigError(f"backend kind must be 'mock' or 'remote', got {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigError("remote backend needs an endpoint")
        if self.kind == "mock" and self.mock_table is None:
            raise ConfigError("mock backend needs a mock_table")
        if self.hallucination_bias < 0:
            raise ConfigError(f"hallucination_bias must be >= 0, got {self.hallucination_bias}")
        if self.timeout_s <= 0:
            raise ConfigError(f"backend timeout_s must be positive, got {self.timeout_s}")
        if self.mock_table is not None:
            self.mock_table = Path(self.mock_table)
        if self.vocab is not None:
            self.vocab = Path(self.vocab)


class LanguageModelBackend(Protocol):
    """Backend contract used by prompt building and decoding."""

    vocab: Vocabulary

    def logits(self, ids: Sequence[int], allowed_ids: Optional[Sequence[int]] = None) -> np.ndarray: ...

    def tokenize(self, text: str) -> list[int]: ...


def check_context(ids: Sequence[int], vocab: Vocabulary, max_context: Optional[int]) -> None:
    if max_context is not None and len(ids) > max_context:
        raise BackendError(f"context of {len(ids)} tokens exceeds the {max_context}-token window")
    for token_id in ids:
        if not 0 <= token_id < vocab.size:
            raise BackendError(f"token id {token_id} outside vocabulary of size {vocab.size}")


@dataclass(frozen=True)
class MockRule:
    suffix: bytes
    weights: tuple[tuple[int, float], ...]


class MockModel:
    """
    A scripted LM over a fixed vocabulary.

    Logits start at zero, add the ``default`` weights, then the weights of
    the longest rule whose suffix ends the decoded context. When the context
    ends with '.', every hallucination token also gets ``bias * weight``.

    For FIM prompts the context is the text the model would complete: the
    prefix section followed by what has been generated after the middle marker.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        rules: Sequence[tuple[str, Mapping[str, float]]] = (),
        hallucinations: Optional[Mapping[str, float]] = None,
        default: Optional[Mapping[str, float]] = None,
    ) -> None:
        self.vocab = vocab
        self.rules = sorted(
            (MockRule(suffix.encode("utf-8"), self._weights(weights)) for suffix, weights in rules),
            key=lambda rule: len(rule.suffix),
            reverse=True,
        )
        self.hallucinations = self._weights(hallucinations or {})
        self.default = self._weights(default or {})

    def _weights(self, weights: Mapping[str, float]) -> tuple[tuple[int, float], ...]:
        try:
            return tuple((self.vocab.token_id(token), float(w)) for token, w in weights.items())
        except VocabularyError as e:
            raise BackendError(f"mock model refers to an unknown token: {e}") from e

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], vocab: Vocabulary) -> "MockModel":
        rules = []
        for i, rule in enumerate(data.get("rules", [])):
            if not isinstance(rule, Mapping) or "suffix" not in rule or "weights" not in rule:
                raise BackendError(f"mock rule {i} needs suffix and weights")
            rules.append((str(rule["suffix"]), rule["weights"]))
        return cls(vocab, rules, data.get("hallucinations"), data.get("default"))

    @classmethod
    def load(cls, path: Union[str, Path], vocab: Vocabulary) -> "MockModel":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise BackendError(f"cannot read mock model {path}: {e}") from e
        model = cls.from_dict(data, vocab)
        logger.info("loaded mock model with %d rules from %s", len(model.rules), path)
        return model

    def context_bytes(self, ids: Sequence[int]) -> bytes:
        middle = self.vocab.special_id("fim_middle")
        if middle is None or middle not in ids:
            return self.vocab.detokenize_bytes(ids)
        ids = list(ids)
        mid = len(ids) - 1 - ids[::-1].index(middle)
        prefix_marker = self.vocab.special_id("fim_prefix")
        suffix_marker = self.vocab.special_id("fim_suffix")
        start = ids.index(prefix_marker) + 1 if prefix_marker in ids else 0
        stop = ids.index(suffix_marker) if suffix_marker in ids[:mid] else mid
        return self.vocab.detokenize_bytes(ids[start:stop] + ids[mid + 1 :])

    def logits(self, ids: Sequence[int], hallucination_bias: float = 0.0) -> np.ndarray:
        out = np.zeros(self.vocab.size, dtype=np.float64)
        for token_id, weight in self.default:
            out[token_id] += weight
        context = self.context_bytes(ids)
        for rule in self.rules:
            if context.endswith(rule.suffix):
                for token_id, weight in rule.weights:
                    out[token_id] += weight
                break
        if hallucination_bias and context.endswith(b"."):
            for token_id, weight in self.hallucinations:
                out[token_id] += hallucination_bias * weight
        return out


class MockBackend:
    """Backend over a :class:`MockModel`; deterministic and safe to share."""

    def __init__(self, model: MockModel, hallucination_bias: float = 0.0, max_context: Optional[int] = None) -> None:
        self.model = model
        self.vocab = model.vocab
        self.hallucination_bias = hallucination_bias
        self.max_context = max_context

    def logits(self, ids: Sequence[int], allowed_ids: Optional[Sequence[int]] = None) -> np.ndarray:
        check_context(ids, self.vocab, self.max_context)
        return self.model.logits(ids, self.hallucination_bias)

    def tokenize(self, text: str) -> list[int]:
        try:
            return self.vocab.tokenize_greedy(text)
        except VocabularyError as e:
            raise BackendError(f"cannot tokenize prompt text: {e}") from e


class RemoteBackend:
    """
    Client for a logit server.

    ``POST /v1/logits`` answers ``{"logits": [...]}`` for the whole vocabulary
    or ``{"sparse": [[id, logit], ...]}`` when ``allowed_ids`` was sent.
    ``POST /v1/tokenize`` answers ``{"tokens": [...]}``.
    """

    def __init__(
        self,
        endpoint: str,
        vocab: Vocabulary,
        client: Optional[httpx.Client] = None,
        timeout_s: float = 30.0,
        max_context: Optional[int] = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.vocab = vocab
        self.max_context = max_context
        self._owns_client = client is None
        self._client = client or httpx.Client(timeout=timeout_s)

    def _post(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = f"{self.endpoint}{path}"
        try:
            response = self._client.post(url, json=payload)
            response.raise_for_status()
            data = response.json()
        except httpx.HTTPError as e:
            raise BackendError(f"logit server request to {url} failed: {e}") from e
        except ValueError as e:
            raise BackendError(f"logit server at {url} returned invalid JSON: {e}") from e
        if not isinstance(data, dict):
            raise BackendError(f"logit server at {url} returned {type(data).__name__}, expected an object")
        return data

    def logits(self, ids: Sequence[int], allowed_ids: Optional[Sequence[int]] = None) -> np.ndarray:
        check_context(ids, self.vocab, self.max_context)
        payload: dict[str, Any] = {"tokens": [int(i) for i in ids]}
        if allowed_ids is not None:
            payload["allowed_ids"] = [int(i) for i in allowed_ids]
        data = self._post("/v1/logits", payload)

        if "logits" in data:
            out = np.asarray(data["logits"], dtype=np.float64)
            if out.shape != (self.vocab.size,):
                raise BackendError(f"logit server returned {out.size} logits for a vocabulary of {self.vocab.size}")
        elif "sparse" in data:
            out = np.full(self.vocab.size, MASKED_LOGIT)
            for token_id, value in data["sparse"]:
                if not 0 <= int(token_id) < self.vocab.size:
                    raise BackendError(f"logit server returned out-of-range token id {token_id}")
                out[int(token_id)] = float(value)
        else:
            raise BackendError('logit server response holds neither "logits" nor "sparse"')
        if not np.isfinite(out).all():
            raise BackendError("logit server returned non-finite logits")
        return out

    def tokenize(self, text: str) -> list[int]:
        tokens = self._post("/v1/tokenize", {"text": text}).get("tokens")
        if not isinstance(tokens, list):
            raise BackendError('tokenize response needs a "tokens" list')
        ids = [int(t) for t in tokens]
        check_context(ids, self.vocab, None)
        return ids

    def close(self) -> None:
        if self._owns_client:
            self._client.close()


def build_backend(
    config: BackendConfig, vocab: Vocabulary, max_context: Optional[int] = None
) -> Union[MockBackend, RemoteBackend]:
    """Create the backend described by ``config`` over ``vocab``."""
    if config.kind == "mock":
        if config.mock_table is None:
            raise ConfigError("mock backend needs a mock_table")
        return MockBackend(MockModel.load(config.mock_table, vocab), config.hallucination_bias, max_context)
    if not config.endpoint:
        raise ConfigError("remote backend needs an endpoint")
    return RemoteBackend(config.endpoint, vocab, timeout_s=config.timeout_s, max_context=max_context)
