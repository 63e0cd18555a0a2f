from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import LexError, UnsupportedConstructError

KEYWORDS = {
    "module", "endmodule", "input", "output", "inout", "wire", "reg", "signed",
    "assign", "always", "posedge", "negedge", "or", "begin", "end", "if", "else",
    "case", "casez", "casex", "endcase", "default",
}

# Recognized so they fail with a named unsupported-construct error rather
# than as a confusing syntax error.
UNSUPPORTED_KEYWORDS = {
    "initial", "function", "endfunction", "task", "endtask", "generate", "endgenerate",
    "for", "while", "repeat", "forever", "parameter", "localparam", "defparam",
    "integer", "real", "realtime", "time", "genvar", "specify", "endspecify",
    "primitive", "endprimitive", "table", "fork", "join", "wait", "disable",
    "supply0", "supply1", "tri", "wand", "wor", "event", "automatic", "logic",
    "always_comb", "always_ff", "always_latch", "interface", "package", "class",
}


@dataclass(frozen=True)
class Token:
    kind: str  # "id", "kw", "num", "op", "eof"
    text: str
    line: int
    col: int


_OPS = sorted([
    "<<<", ">>>", "===", "!==", "**",
    "<<", ">>", "==", "!=", "<=", ">=", "&&", "||", "~&", "~|", "~^", "^~",
    "+", "-", "*", "/", "%", "&", "|", "^", "~", "!", "<", ">", "?", ":",
    "(", ")", "[", "]", "{", "}", ";", ",", ".", "=", "@", "#",
], key=len, reverse=True)

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<nl>\n)
  | (?P<lcomment>//[^\n]*)
  | (?P<bcomment>/\*.*?\*/)
  | (?P<directive>`[A-Za-z_]\w*[^\n]*)
  | (?P<system>\$[A-Za-z_]\w*)
  | (?P<num>(?:\d[\d_]*)?\s*'[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ?_]+|\d[\d_]*)
  | (?P<id>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<op>""" + "|".join(re.escape(o) for o in _OPS) + r""")
""", re.VERBOSE | re.DOTALL)


def tokenize(src: str) -> list[Token]:
    out: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(src)
    while pos < n:
        m = _TOKEN_RE.match(src, pos)
        col = pos - line_start + 1
        if m is None:
            if src.startswith("/*", pos):
                raise LexError("unterminated block comment", line, col)
            raise LexError(f"unexpected character {src[pos]!r}", line, col)
        kind = m.lastgroup
        text = m.group()
        if kind == "directive":
            name = text.split()[0]
            if name != "`timescale":
                raise UnsupportedConstructError(f"compiler directive {name}", line, col)
        elif kind == "system":
            raise UnsupportedConstructError(f"system task {text}", line, col)
        elif kind == "id":
            if text in UNSUPPORTED_KEYWORDS:
                raise UnsupportedConstructError(text, line, col)
            out.append(Token("kw" if text in KEYWORDS else "id", text, line, col))
        elif kind in ("num", "op"):
            if kind == "op" and text in ("===", "!==", "**", "#"):
                raise UnsupportedConstructError(text if text != "#" else "delay/parameter '#'", line, col)
            out.append(Token(kind, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


def parse_number(text: str) -> tuple[int | None, int]:
    """Return (width or None if unsized, value) for a Verilog number literal.

    x/z/? digits read as 0.
    """
    t = text.replace("_", "").replace(" ", "").replace("\t", "")
    if "'" not in t:
        return None, int(t)
    size, rest = t.split("'", 1)
    rest = rest.lstrip("sS")
    base = {"b": 2, "o": 8, "d": 10, "h": 16}[rest[0].lower()]
    digits = re.sub(r"[xXzZ?]", "0", rest[1:])
    value = int(digits, base)
    width = int(size) if size else None
    if width is not None:
        if width < 1:
            raise LexError(f"zero-width literal {text!r}")
        value &= (1 << width) - 1
    return width, value
