"""PHP frontend: source collection and lexical analysis.

The lexer recognises the PHP subset handled by the rest of the pipeline:
variables and superglobals, assignments, string/numeric/bool/null literals,
arithmetic/concatenation/comparison/logic operators, if/elseif/else,
switch/case, while/for/foreach loops, function definitions and calls, and the
echo/print/exit output constructs.  Object-oriented code and anything else
outside the subset raises UnsupportedSyntaxError so callers can skip the file.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import LexError, UnsupportedSyntaxError

log = logging.getLogger("cca.frontend")

# --- token kind groups -------------------------------------------------------
# The four counted groups. VAR / FUNC_CALL / IDENT plus the unsupported-syntax
# markers below sit outside them.

KEYWORD_KINDS = {
    "if": "IF",
    "elseif": "ELSEIF",
    "else": "ELSE",
    "switch": "SWITCH",
    "case": "CASE",
    "default": "DEFAULT",
    "break": "BREAK",
    "continue": "CONTINUE",
    "while": "WHILE",
    "do": "DO",
    "for": "FOR",
    "foreach": "FOREACH",
    "as": "AS",
    "function": "FUNCTION",
    "return": "RETURN",
    "global": "GLOBAL",
    "array": "ARRAY",
    "isset": "ISSET",
}

OPERATOR_KINDS = {
    ".=": "CONCAT_EQUALS",
    "==": "EQ",
    "!=": "NEQ",
    "<=": "LE",
    ">=": "GE",
    "&&": "AND",
    "||": "OR",
    "=": "EQUALS",
    "+": "PLUS",
    "-": "MINUS",
    "*": "TIMES",
    "/": "DIVIDE",
    "%": "MOD",
    ".": "CONCAT",
    "<": "LT",
    ">": "GT",
    "!": "NOT",
}

METACHAR_KINDS = {
    "(": "LPAREN",
    ")": "RPAREN",
    "{": "LBRACE",
    "}": "RBRACE",
    "[": "LBRACKET",
    "]": "RBRACKET",
    ";": "SEMI",
    ",": "COMMA",
    ":": "COLON",
}

LITERAL_KINDS = ("STRING", "NUMBER", "BOOL", "NULL")

TOKEN_GROUPS = {
    "keywords": tuple(sorted(set(KEYWORD_KINDS.values()))),
    "operators": tuple(sorted(set(OPERATOR_KINDS.values()))),
    "metacharacters": tuple(sorted(set(METACHAR_KINDS.values()))),
    "literals": LITERAL_KINDS,
}

# Constructs that are valid PHP but outside the supported subset.  Seeing one
# aborts the file rather than producing silently wrong dataflow.
UNSUPPORTED_WORDS = frozenset(
    "class new extends implements interface trait abstract final "
    "public private protected static namespace use const clone "
    "try catch finally throw yield".split()
)

# echo/print/exit take arguments without parentheses; they still lex as
# call names so task knowledge can rewrite them later.
CALL_WORDS = frozenset({"echo", "print", "exit", "die"})

WORD_LITERALS = {"true": "BOOL", "false": "BOOL", "null": "NULL"}


@dataclass
class LexToken:
    type: str
    value: str
    line: int

    def __iter__(self):
        return iter((self.type, self.value, self.line))


@dataclass
class SourceFile:
    path: Path
    rel: str
    file_id: int
    text: str = field(repr=False)


# --- lexer -------------------------------------------------------------------

def _operator_alternation() -> str:
    # Longest lexeme first so ".=" wins over "." and "==" over "=".
    ops = sorted(OPERATOR_KINDS, key=len, reverse=True)
    return "|".join(re.escape(op) for op in ops)


_RULES = [
    ("NEWLINE", r"\n"),
    ("SKIP", r"[ \t\r\f]+"),
    ("BLOCK_COMMENT", r"/\*[\s\S]*?\*/"),
    ("COMMENT", r"(?://|\#)[^\n]*"),
    ("DQ_STRING", r'"(?:[^"\\]|\\[\s\S])*"'),
    ("SQ_STRING", r"'(?:[^'\\]|\\[\s\S])*'"),
    ("NUMBER", r"\d+(?:\.\d+)?"),
    ("UNSUPPORTED_OP", r"->|::|=>|<<<|\?|@|&(?!&)|\|(?!\|)"),
    ("OPERATOR", _operator_alternation()),
    ("METACHAR", r"[(){}\[\];,:]"),
    ("VAR", r"\$[A-Za-z_]\w*"),
    ("WORD", r"[A-Za-z_]\w*"),
    ("MISMATCH", r"."),
]

_MASTER = re.compile("|".join(f"(?P<{name}>{pat})" for name, pat in _RULES))

_OPEN_TAG = re.compile(r"<\?(php\b|=)?")


def _php_regions(text: str, path: str) -> list[tuple[int, int, int]]:
    """Return (start, end, start_line) spans of code between <?php and ?>."""
    regions = []
    pos = 0
    line = 1
    while True:
        m = _OPEN_TAG.search(text, pos)
        if m is None:
            break
        line += text.count("\n", pos, m.start())
        if m.group(1) != "php":
            raise UnsupportedSyntaxError(
                f"unsupported open tag {m.group(0)!r}", path, line
            )
        close = text.find("?>", m.end())
        end = close if close != -1 else len(text)
        regions.append((m.end(), end, line))
        line += text.count("\n", m.start(), end)
        pos = end + 2 if close != -1 else len(text)
    return regions


def lex(text: str, path: str = "<string>") -> list[LexToken]:
    """Tokenise one PHP source text into ⟨type, value, line⟩ triples.

    Text outside <?php ... ?> regions is ignored (but still counted for line
    numbers).  Raises LexError on unknown characters and
    UnsupportedSyntaxError on out-of-subset constructs.
    """
    tokens: list[LexToken] = []
    for start, end, start_line in _php_regions(text, path):
        line = start_line
        for m in _MASTER.finditer(text, start, end):
            kind = m.lastgroup
            value = m.group()
            if kind == "NEWLINE":
                line += 1
                continue
            if kind == "SKIP" or kind == "COMMENT":
                continue
            if kind == "BLOCK_COMMENT":
                line += value.count("\n")
                continue
            if kind in ("DQ_STRING", "SQ_STRING"):
                tokens.append(LexToken("STRING", value, line))
                line += value.count("\n")
                continue
            if kind == "NUMBER":
                tokens.append(LexToken("NUMBER", value, line))
            elif kind == "OPERATOR":
                tokens.append(LexToken(OPERATOR_KINDS[value], value, line))
            elif kind == "METACHAR":
                tokens.append(LexToken(METACHAR_KINDS[value], value, line))
            elif kind == "VAR":
                tokens.append(LexToken("VAR", value, line))
            elif kind == "WORD":
                tokens.append(_classify_word(value, line, m, text, path))
            elif kind == "UNSUPPORTED_OP":
                raise UnsupportedSyntaxError(
                    f"construct {value!r} is outside the supported subset",
                    path,
                    line,
                )
            else:  # MISMATCH
                raise LexError(
                    f"character {value!r} matches no lexer rule", path, line
                )
    return tokens


def _classify_word(
    value: str, line: int, m: re.Match, text: str, path: str
) -> LexToken:
    word = value.lower()
    if word in UNSUPPORTED_WORDS:
        raise UnsupportedSyntaxError(
            f"keyword {value!r} is outside the supported subset", path, line
        )
    if word in WORD_LITERALS:
        return LexToken(WORD_LITERALS[word], value, line)
    if word in CALL_WORDS:
        return LexToken("FUNC_CALL", value, line)
    if word in KEYWORD_KINDS:
        return LexToken(KEYWORD_KINDS[word], value, line)
    # A name immediately applied to arguments is a call; anything else is a
    # bare constant-like identifier.
    if re.match(r"\s*\(", text[m.end():]):
        return LexToken("FUNC_CALL", value, line)
    return LexToken("IDENT", value, line)


# --- source collection -------------------------------------------------------

def collect_sources(root: Path | str) -> list[SourceFile]:
    """Collect .php files under a directory, sorted by relative path.

    Files that cannot be read or are not valid UTF-8 text are skipped with a
    logged warning.  file_id is the position in the sorted, readable list.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"source directory not found: {root}")
    candidates = sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".php"),
        key=lambda p: p.relative_to(root).as_posix(),
    )
    sources: list[SourceFile] = []
    for path in candidates:
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            log.warning("skipping %s: %s", path, exc)
            continue
        sources.append(
            SourceFile(
                path=path,
                rel=path.relative_to(root).as_posix(),
                file_id=len(sources),
                text=text,
            )
        )
    return sources


def dump_lextokens(tokens: list[LexToken]) -> str:
    """Render tokens one per line as type<TAB>value<TAB>line."""
    return "\n".join(f"{t.type}\t{t.value}\t{t.line}" for t in tokens)
