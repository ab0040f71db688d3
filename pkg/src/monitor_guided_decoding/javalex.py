"""
A small best-effort Java lexer.

It serves trigger detection, metric tokenization and method-close detection.
It never raises: unknown characters become single-character punctuators and
unterminated strings or comments run to end of input with ``terminated=False``.
"""

import re
from collections.abc import Iterator
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union


class TokenKind(Enum):
    """Kinds of significant Java tokens."""

    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    INT_LITERAL = "int_literal"
    FLOAT_LITERAL = "float_literal"
    STRING_LITERAL = "string_literal"
    CHAR_LITERAL = "char_literal"
    OPERATOR = "operator"
    PUNCTUATOR = "punctuator"


class TriviaKind(Enum):
    """Kinds of skipped spans."""

    WHITESPACE = "whitespace"
    LINE_COMMENT = "line_comment"
    BLOCK_COMMENT = "block_comment"


# Java 17 reserved keywords plus the literal words true/false/null.
# Contextual words (var, record, yield, sealed, permits) stay identifiers.
KEYWORDS = frozenset(
    """
    abstract assert boolean break byte case catch char class const continue default do double else enum
    extends final finally float for goto if implements import instanceof int interface long native new
    package private protected public return short static strictfp super switch synchronized this throw
    throws transient try void volatile while _ true false null
    """.split()
)

OPERATORS = (
    ">>>=",
    "<<=",
    ">>=",
    ">>>",
    "...",
    "->",
    "::",
    "++",
    "--",
    "&&",
    "||",
    "==",
    "!=",
    "<=",
    ">=",
    "+=",
    "-=",
    "*=",
    "/=",
    "&=",
    "|=",
    "^=",
    "%=",
    "<<",
    ">>",
    "=",
    "<",
    ">",
    "!",
    "~",
    "?",
    ":",
    "+",
    "-",
    "*",
    "/",
    "&",
    "|",
    "^",
    "%",
    ".",
)

_DIGITS = r"[0-9](?:[0-9_]*[0-9])?"
_EXPONENT = rf"[eE][+-]?{_DIGITS}"
_FLOAT = (
    rf"(?:{_DIGITS}\.(?:{_DIGITS})?(?:{_EXPONENT})?[fFdD]?"
    rf"|\.{_DIGITS}(?:{_EXPONENT})?[fFdD]?"
    rf"|{_DIGITS}{_EXPONENT}[fFdD]?"
    rf"|{_DIGITS}[fFdD])"
)
_INT = r"(?:0[xX][0-9a-fA-F_]+|0[bB][01_]+|" + _DIGITS + r")[lL]?"

_LEXEME = re.compile(
    "|".join(
        [
            r"(?P<whitespace>\s+)",
            r"(?P<line_comment>//[^\r\n]*)",
            r"(?P<block_comment>/\*[\s\S]*?(?:\*/|\Z))",
            r'(?P<text_block>"""[\s\S]*?(?:"""|\Z))',
            r'(?P<string>"(?:[^"\\\r\n]|\\.)*"?)',
            r"(?P<char>'(?:[^'\\\r\n]|\\.)*'?)",
            rf"(?P<float>{_FLOAT})",
            rf"(?P<int>{_INT})",
            r"(?P<word>(?:[^\W\d]|\$)(?:\w|\$)*)",
            "(?P<operator>" + "|".join(re.escape(op) for op in OPERATORS) + ")",
            r"(?P<punctuator>[\s\S])",
        ]
    )
)


@dataclass(frozen=True)
class JavaToken:
    """A significant token; ``offset`` is its string index in the source."""

    kind: TokenKind
    text: str
    offset: int
    terminated: bool = True

    @property
    def end(self) -> int:
        return self.offset + len(self.text)


@dataclass(frozen=True)
class Trivia:
    """A skipped span (whitespace or comment)."""

    kind: TriviaKind
    text: str
    offset: int
    terminated: bool = True


def scan(source: str) -> Iterator[Union[JavaToken, Trivia]]:
    """Yield every lexeme, tokens and trivia alike, covering ``source`` exactly."""
    pos = 0
    while pos < len(source):
        match = _LEXEME.match(source, pos)
        if match is None:  # pragma: no cover - the punctuator branch matches any character
            yield JavaToken(TokenKind.PUNCTUATOR, source[pos], pos)
            pos += 1
            continue
        group = match.lastgroup
        text = match.group()
        if group == "whitespace":
            yield Trivia(TriviaKind.WHITESPACE, text, pos)
        elif group == "line_comment":
            yield Trivia(TriviaKind.LINE_COMMENT, text, pos)
        elif group == "block_comment":
            yield Trivia(TriviaKind.BLOCK_COMMENT, text, pos, len(text) >= 4 and text.endswith("*/"))
        elif group == "text_block":
            yield JavaToken(TokenKind.STRING_LITERAL, text, pos, len(text) >= 6 and text.endswith('"""'))
        elif group == "string":
            yield JavaToken(TokenKind.STRING_LITERAL, text, pos, _closed(text, '"'))
        elif group == "char":
            yield JavaToken(TokenKind.CHAR_LITERAL, text, pos, _closed(text, "'"))
        elif group == "float":
            yield JavaToken(TokenKind.FLOAT_LITERAL, text, pos)
        elif group == "int":
            yield JavaToken(TokenKind.INT_LITERAL, text, pos)
        elif group == "word":
            kind = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER
            yield JavaToken(kind, text, pos)
        elif group == "operator":
            yield JavaToken(TokenKind.OPERATOR, text, pos)
        else:
            yield JavaToken(TokenKind.PUNCTUATOR, text, pos)
        pos = match.end()


def _closed(text: str, quote: str) -> bool:
    if len(text) < 2 or not text.endswith(quote):
        return False
    # an odd run of backslashes before the last quote escapes it
    backslashes = len(text[1:-1]) - len(text[1:-1].rstrip("\\"))
    return backslashes % 2 == 0


def lex(source: str) -> list[JavaToken]:
    """Significant tokens of ``source``; whitespace and comments are skipped."""
    return [lexeme for lexeme in scan(source) if isinstance(lexeme, JavaToken)]


def identifiers(source: str) -> list[str]:
    """Identifier texts in order, keywords excluded."""
    return [token.text for token in lex(source) if token.kind is TokenKind.IDENTIFIER]


def brace_depth(source: str) -> int:
    """Net count of '{' minus '}' punctuators, ignoring strings and comments."""
    depth = 0
    for token in lex(source):
        if token.kind is TokenKind.PUNCTUATOR:
            if token.text == "{":
                depth += 1
            elif token.text == "}":
                depth -= 1
    return depth


def method_close_offset(body_continuation: str, open_depth: int) -> Optional[int]:
    """
    Offset one past the '}' that closes the method, or None if not reached.

    Args:
        body_continuation: Text that continues a method body
        open_depth: Braces open at the start of ``body_continuation`` (>= 1)
    """
    if open_depth < 1:
        raise ValueError(f"open_depth must be >= 1, got {open_depth}")
    depth = open_depth
    for token in lex(body_continuation):
        if token.kind is not TokenKind.PUNCTUATOR:
            continue
        if token.text == "{":
            depth += 1
        elif token.text == "}":
            depth -= 1
            if depth == 0:
                return token.end
    return None


def truncate_at_method_close(text: str, open_depth: int) -> str:
    """``text`` cut just after the method close, or unchanged if it never closes."""
    end = method_close_offset(text, open_depth)
    return text if end is None else text[:end]
