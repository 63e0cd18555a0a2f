"""Syntax tree for the supported Verilog subset."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class Span:
    line: int
    col: int


# ---- expressions


@dataclass(frozen=True)
class Ident:
    name: str
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Number:
    width: int | None  # None: unsized
    value: int
    text: str = ""
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Ternary:
    cond: "Expr"
    then: "Expr"
    other: "Expr"
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Concat:
    items: tuple["Expr", ...]
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Replicate:
    count: int
    items: tuple["Expr", ...]
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class BitSelect:
    base: Ident
    index: "Expr"
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class PartSelect:
    base: Ident
    msb: int
    lsb: int
    span: Span = field(compare=False, default=Span(0, 0))


Expr = Union[Ident, Number, Unary, Binary, Ternary, Concat, Replicate, BitSelect, PartSelect]


# ---- statements


@dataclass(frozen=True)
class ProcAssign:
    lhs: Expr
    rhs: Expr
    blocking: bool
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple["Stmt", ...]
    other: tuple["Stmt", ...]
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class CaseItem:
    labels: tuple[Expr, ...]  # empty tuple: default
    body: tuple["Stmt", ...]


@dataclass(frozen=True)
class Case:
    kind: str  # case | casez | casex
    subject: Expr
    items: tuple[CaseItem, ...]
    span: Span = field(compare=False, default=Span(0, 0))


Stmt = Union[ProcAssign, If, Case]


# ---- module items


@dataclass(frozen=True)
class Port:
    name: str
    direction: str  # input | output | inout
    width: int
    is_reg: bool = False
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class NetDecl:
    kind: str  # wire | reg
    name: str
    width: int
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class ContAssign:
    lhs: Expr
    rhs: Expr
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Always:
    clocked: bool
    events: tuple[tuple[str, str], ...]  # (edge or "", signal name); empty for @(*)
    body: tuple[Stmt, ...]
    span: Span = field(compare=False, default=Span(0, 0))


@dataclass(frozen=True)
class Instance:
    module: str
    name: str
    connections: tuple[tuple[str | None, Expr | None], ...]  # (port or None if positional, expr)
    span: Span = field(compare=False, default=Span(0, 0))


Item = Union[NetDecl, ContAssign, Always, Instance]


@dataclass
class VerilogModule:
    name: str
    ports: list[Port]
    items: list[Item]
    span: Span = field(compare=False, default=Span(0, 0))
    # modules instantiated by this one, resolved from the same source
    library: dict[str, "VerilogModule"] = field(default_factory=dict, compare=False)

    def port(self, name: str) -> Port | None:
        return next((p for p in self.ports if p.name == name), None)

    def widths(self) -> dict[str, int]:
        w = {p.name: p.width for p in self.ports}
        for it in self.items:
            if isinstance(it, NetDecl):
                w[it.name] = it.width
        return w

    @property
    def input_bits(self) -> int:
        return sum(p.width for p in self.ports if p.direction in ("input", "inout"))

    @property
    def output_bits(self) -> int:
        return sum(p.width for p in self.ports if p.direction in ("output", "inout"))
