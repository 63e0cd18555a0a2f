class VerilogError(ValueError):
    """Base class; ``category`` is stable and used by the CLI and tests."""

    category = "verilog"

    def __init__(self, msg: str, line: int = 0, col: int = 0):
        self.line, self.col = line, col
        super().__init__(f"{line}:{col}: {msg}" if line else msg)


class LexError(VerilogError):
    category = "lexical"


class VerilogSyntaxError(VerilogError):
    category = "syntax"

    def __init__(self, msg: str, line: int = 0, col: int = 0, expected: frozenset = frozenset()):
        self.expected = frozenset(expected)
        if expected:
            msg = f"{msg} (expected one of: {', '.join(sorted(expected))})"
        super().__init__(msg, line, col)


class UnsupportedConstructError(VerilogError):
    category = "unsupported"

    def __init__(self, construct: str, line: int = 0, col: int = 0):
        self.construct = construct
        super().__init__(f"unsupported construct {construct!r}", line, col)


class SemanticError(VerilogError):
    category = "semantic"
