"""
Shared fixtures: a toy vocabulary, a scripted LM and a small Java workspace.

The scripted LM reproduces the builder scenario: after
``ServerNode.newServerNode().`` it strongly prefers the non-existent member
``host`` while the builder only offers ``withIp``, ``withPort`` and
``newServerNode``.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import pytest

from monitor_guided_decoding.harness import TestCase, case_from_file, write_dataset
from monitor_guided_decoding.lm import MockBackend, MockModel
from monitor_guided_decoding.suggest import FixtureProvider
from monitor_guided_decoding.vocab import Vocabulary

SINGLE_CHARS = [chr(c) for c in range(32, 127)] + ["\n", "\t"]
WORDS = ["with", "Ip", "Port", "host", "port", "ip", ");", "    ", "newServerNode", "ServerNode", "return"]
SPECIALS = ["<fim_prefix>", "<fim_suffix>", "<fim_middle>", "<|endoftext|>"]

BUILDER_SUGGESTIONS = ["withIp", "withPort", "newServerNode"]

CLUSTER_SOURCE = """\
package demo;

public class Cluster {
    public ServerNode node(String ip) {
        return ServerNode.newServerNode().withIp(ip);
    }

    public ServerNode local() {
        return ServerNode.newServerNode().withPort(8080);
    }
}
"""

CLUSTER_FILE = "src/demo/Cluster.java"

MOCK_TABLE: dict[str, Any] = {
    "rules": [
        {"suffix": "newServerNode().", "weights": {"with": 20}},
        {"suffix": "().with", "weights": {"Ip": 20}},
        {"suffix": "().withIp", "weights": {"(": 20}},
        {"suffix": "().withIp(", "weights": {"ip": 20}},
        {"suffix": "withIp(ip", "weights": {");": 20}},
        {"suffix": "(ip);", "weights": {"\n": 20}},
        {"suffix": "(ip);\n", "weights": {"    ": 20}},
        {"suffix": "(ip);\n    ", "weights": {"}": 20}},
        {"suffix": "().host", "weights": {"(": 20}},
        {"suffix": "host(", "weights": {"ip": 20}},
        {"suffix": "host(ip", "weights": {");": 20}},
    ],
    "hallucinations": {"host": 1},
    "default": {},
}

HALLUCINATION_BIAS = 40.0


def make_vocab() -> Vocabulary:
    tokens = SINGLE_CHARS + WORDS + SPECIALS
    first = len(SINGLE_CHARS) + len(WORDS)
    special = {
        "fim_prefix": first,
        "fim_suffix": first + 1,
        "fim_middle": first + 2,
        "eos": first + 3,
    }
    return Vocabulary.from_strings(tokens, special)


def dot_offsets(source: str = CLUSTER_SOURCE) -> list[int]:
    """Offsets of the '.' after each ``newServerNode()``."""
    marker = "newServerNode()"
    offsets = []
    start = 0
    while True:
        i = source.find(marker + ".", start)
        if i < 0:
            return offsets
        offsets.append(i + len(marker))
        start = i + 1


@dataclass
class RunFiles:
    root: Path
    workspace: Path
    vocab: Path
    mock_table: Path
    fixtures: Path
    dataset: Path
    config_toml: Path
    config_json: Path
    cases: list[TestCase]


@pytest.fixture
def vocab() -> Vocabulary:
    """The toy vocabulary: printable ASCII, a few words and four special tokens."""
    return make_vocab()


@pytest.fixture
def mock_backend(vocab: Vocabulary) -> MockBackend:
    """The scripted builder LM with its hallucination bias switched on."""
    return MockBackend(MockModel.from_dict(MOCK_TABLE, vocab), hallucination_bias=HALLUCINATION_BIAS)


@pytest.fixture
def workspace(tmp_path: Path) -> Path:
    root = tmp_path / "repo"
    (root / "src" / "demo").mkdir(parents=True)
    (root / CLUSTER_FILE).write_text(CLUSTER_SOURCE, encoding="utf-8")
    return root


@pytest.fixture
def builder_cases(workspace: Path) -> list[TestCase]:
    """One case per ``newServerNode().`` dereference, in file order."""
    return [case_from_file(workspace, CLUSTER_FILE, offset) for offset in dot_offsets()]


@pytest.fixture
def builder_case(builder_cases: list[TestCase]) -> TestCase:
    return builder_cases[0]


@pytest.fixture
def fixture_provider() -> FixtureProvider:
    return FixtureProvider([(CLUSTER_FILE, offset, BUILDER_SUGGESTIONS) for offset in dot_offsets()])


@pytest.fixture
def run_files(tmp_path: Path, workspace: Path, vocab: Vocabulary, builder_cases: list[TestCase]) -> RunFiles:
    """Vocabulary, mock table, fixtures, dataset and configs for a complete run."""
    vocab_path = tmp_path / "vocab.json"
    vocab_path.write_text(json.dumps(vocab.to_dict()), encoding="utf-8")
    mock_path = tmp_path / "mock.json"
    mock_path.write_text(json.dumps(MOCK_TABLE), encoding="utf-8")
    fixtures_path = tmp_path / "fixtures.json"
    fixtures_path.write_text(
        json.dumps(
            {"suggestions": [{"file": CLUSTER_FILE, "offset": o, "items": BUILDER_SUGGESTIONS} for o in dot_offsets()]}
        ),
        encoding="utf-8",
    )
    dataset_path = tmp_path / "dataset.jsonl"
    write_dataset(builder_cases, dataset_path)

    config_toml = tmp_path / "config.toml"
    config_toml.write_text(
        """\
schedule = [0.2, 0.4, 0.6, 0.6, 0.8, 0.8]
seed = 7

[plan]
strategy = "standard"
total_context = 512
generation_budget = 48

[backend]
kind = "mock"
vocab = "vocab.json"
mock_table = "mock.json"
hallucination_bias = 40.0

[provider]
kind = "fixture"
fixtures = "fixtures.json"
""",
        encoding="utf-8",
    )
    config_json = tmp_path / "config.json"
    config_json.write_text(
        json.dumps(
            {
                "schedule": [0.2, 0.4, 0.6, 0.6, 0.8, 0.8],
                "seed": 7,
                "compare_baseline": True,
                "plan": {"total_context": 512, "generation_budget": 48},
                "backend": {
                    "kind": "mock",
                    "vocab": "vocab.json",
                    "mock_table": "mock.json",
                    "hallucination_bias": 40.0,
                },
                "provider": {"kind": "fixture", "fixtures": "fixtures.json"},
            }
        ),
        encoding="utf-8",
    )
    return RunFiles(
        tmp_path,
        workspace,
        vocab_path,
        mock_path,
        fixtures_path,
        dataset_path,
        config_toml,
        config_json,
        builder_cases,
    )
