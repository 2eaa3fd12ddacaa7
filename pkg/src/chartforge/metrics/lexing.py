"""Lexical tokenization of Python source for the code-similarity metrics.

Tokens are the language's lexical tokens (identifiers, keywords, literals,
operators), not whitespace words: layout and comments carry no similarity
signal.  Ill-formed sources fall back to a regex scan so tokenization is
total.
"""

from __future__ import annotations

import io
import keyword
import re
import tokenize

PYTHON_KEYWORDS = frozenset(keyword.kwlist)

_KEPT_TOKEN_TYPES = frozenset(
    {tokenize.NAME, tokenize.NUMBER, tokenize.STRING, tokenize.OP}
)

_FALLBACK_RE = re.compile(r"\w+|[^\w\s]")


def lex_source(source: str) -> list[str]:
    """Tokenize Python source into its lexical token strings."""
    try:
        tokens = [
            tok.string
            for tok in tokenize.generate_tokens(io.StringIO(source).readline)
            if tok.type in _KEPT_TOKEN_TYPES
        ]
    except (tokenize.TokenError, IndentationError, SyntaxError, ValueError):
        tokens = _FALLBACK_RE.findall(source)
    return tokens
