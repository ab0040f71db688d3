"""Tests for the Java lexer."""

import pytest

from monitor_guided_decoding.javalex import (
    JavaToken,
    TokenKind,
    Trivia,
    TriviaKind,
    brace_depth,
    identifiers,
    lex,
    method_close_offset,
    scan,
    truncate_at_method_close,
)


def kinds(source: str) -> list[tuple[str, str]]:
    return [(t.kind.value, t.text) for t in lex(source)]


class TestLex:
    """Test tokenization."""

    def test_statement(self) -> None:
        """Test a typical dereference chain."""
        assert kinds('return node.withIp(ip, "a");') == [
            ("keyword", "return"),
            ("identifier", "node"),
            ("operator", "."),
            ("identifier", "withIp"),
            ("punctuator", "("),
            ("identifier", "ip"),
            ("punctuator", ","),
            ("string_literal", '"a"'),
            ("punctuator", ")"),
            ("punctuator", ";"),
        ]

    def test_offsets(self) -> None:
        """Test that offsets are string indices."""
        tokens = lex("  a.b")
        assert [(t.text, t.offset, t.end) for t in tokens] == [("a", 2, 3), (".", 3, 4), ("b", 4, 5)]

    def test_keywords_and_contextual_words(self) -> None:
        """Test the reserved-word set."""
        assert kinds("var record _ true null goto") == [
            ("identifier", "var"),
            ("identifier", "record"),
            ("keyword", "_"),
            ("keyword", "true"),
            ("keyword", "null"),
            ("keyword", "goto"),
        ]

    def test_numeric_literals(self) -> None:
        """Test float and integer literal forms."""
        assert kinds("3. 1e10 .5f 0x1F 10L 1_000") == [
            ("float_literal", "3."),
            ("float_literal", "1e10"),
            ("float_literal", ".5f"),
            ("int_literal", "0x1F"),
            ("int_literal", "10L"),
            ("int_literal", "1_000"),
        ]

    def test_longest_operator(self) -> None:
        """Test that multi-character operators win."""
        assert [t.text for t in lex("a >>>= b -> c :: d...")] == ["a", ">>>=", "b", "->", "c", "::", "d", "..."]

    def test_comments_are_skipped(self) -> None:
        """Test that comments are trivia."""
        assert identifiers("a /* b */ c // d\n e") == ["a", "c", "e"]

    def test_unterminated_literals(self) -> None:
        """Test best-effort handling of unterminated text."""
        (token,) = lex('"abc')
        assert token.kind is TokenKind.STRING_LITERAL
        assert not token.terminated
        (trivia,) = list(scan("/* open"))
        assert isinstance(trivia, Trivia)
        assert trivia.kind is TriviaKind.BLOCK_COMMENT
        assert not trivia.terminated

    def test_escaped_quote(self) -> None:
        """Test that an escaped quote does not end a string."""
        (token,) = lex(r'"a\"b"')
        assert token.terminated
        assert token.text == r'"a\"b"'

    def test_scan_covers_source(self) -> None:
        """Test that lexemes tile the input exactly."""
        source = 'class A {\n  // x\n  int f() { return "}" + \'{\' + 3.; }\n}\n#'
        assert "".join(lexeme.text for lexeme in scan(source)) == source
        assert isinstance(list(scan("#"))[0], JavaToken)


class TestBraces:
    """Test brace depth and method-close detection."""

    def test_brace_depth_ignores_strings_and_comments(self) -> None:
        """Test that only punctuator braces count."""
        assert brace_depth('class A { void f() { String s = "{"; // {\n') == 2

    def test_method_close(self) -> None:
        """Test the offset one past the closing brace."""
        body = "withIp(ip);\n    }\n}"
        assert method_close_offset(body, 1) == body.index("}") + 1

    def test_nested_blocks(self) -> None:
        """Test that inner blocks do not close the method."""
        body = "x(); if (a) { b(); } c(); }"
        assert method_close_offset(body, 1) == len(body)
        assert method_close_offset(body, 2) is None

    def test_braces_in_literals(self) -> None:
        """Test that braces in literals are ignored."""
        body = "s(\"}\", '}'); }"
        assert method_close_offset(body, 1) == len(body)

    def test_not_closed(self) -> None:
        """Test an incomplete body."""
        assert method_close_offset("withIp(ip);", 1) is None

    def test_open_depth_must_be_positive(self) -> None:
        """Test the open_depth precondition."""
        with pytest.raises(ValueError, match="open_depth must be >= 1"):
            method_close_offset("}", 0)

    def test_truncate(self) -> None:
        """Test cutting text at the method close."""
        assert truncate_at_method_close("a(); } int g() {}", 1) == "a(); }"
        assert truncate_at_method_close("a();", 1) == "a();"
