"""Lower a parsed module to an :class:`AstGraph` with five node categories.

Layout: one root (the module).  Ports and declared nets become variable
nodes, children of the root (or of their instance node when inlined).  Each
continuous or procedural assignment becomes an ``edge`` node whose syntactic
children are the right-hand side; a dataflow link runs from the edge node to
every variable it drives.  Operators, ``always`` blocks, ``if``/``case`` and
instances are operation nodes.  Literals are constant nodes (one per
occurrence).  Identifier references point at the shared variable node, so
variables and constants are always leaves.
"""

from __future__ import annotations

from ..graphio import AST_CATEGORIES, AstGraph, AstNode
from .syntax import (
    Always, Binary, BitSelect, Case, Concat, ContAssign, Ident, If, Instance, NetDecl,
    Number, PartSelect, ProcAssign, Replicate, Ternary, Unary, VerilogModule,
)

ROOT, VARIABLE, OPERATION, CONSTANT, EDGE = range(5)
assert AST_CATEGORIES[EDGE] == "edge"

UNSIZED_WIDTH = 32

# Fixed operation-code table.  0 means "not an operation"; 99 is the catch-all.
OP_CODES: dict[str, int] = {
    "NOT": 1, "LOGNOT": 2, "NEGATE": 3, "UPLUS": 4,
    "REDAND": 5, "REDOR": 6, "REDXOR": 7, "REDNAND": 8, "REDNOR": 9, "REDXNOR": 10,
    "AND": 11, "OR": 12, "XOR": 13, "XNOR": 14, "NAND": 15, "NOR": 16,
    "ADD": 17, "SUB": 18, "MUL": 19, "DIV": 20, "MOD": 21,
    "SHL": 22, "SHR": 23, "ASHL": 24, "ASHR": 25,
    "EQ": 26, "NEQ": 27, "LT": 28, "LTE": 29, "GT": 30, "GTE": 31,
    "LOGAND": 32, "LOGOR": 33,
    "COND": 34, "CONCAT": 35, "REPLICATE": 36, "BITSEL": 37, "PARTSEL": 38,
    "ALWAYS_COMB": 40, "ALWAYS_FF": 41, "IF": 42, "CASE": 43, "CASEZ": 44, "CASEX": 45,
    "INSTANCE": 46,
    "OTHER": 99,
}
OP_NAMES = {v: k for k, v in OP_CODES.items()}

_BINARY = {
    "&": "AND", "|": "OR", "^": "XOR", "~^": "XNOR", "^~": "XNOR", "~&": "NAND", "~|": "NOR",
    "+": "ADD", "-": "SUB", "*": "MUL", "/": "DIV", "%": "MOD",
    "<<": "SHL", ">>": "SHR", "<<<": "ASHL", ">>>": "ASHR",
    "==": "EQ", "!=": "NEQ", "<": "LT", "<=": "LTE", ">": "GT", ">=": "GTE",
    "&&": "LOGAND", "||": "LOGOR",
}
_UNARY = {
    "~": "NOT", "!": "LOGNOT", "-": "NEGATE", "+": "UPLUS",
    "&": "REDAND", "|": "REDOR", "^": "REDXOR", "~&": "REDNAND", "~|": "REDNOR",
    "~^": "REDXNOR", "^~": "REDXNOR",
}
_ONE_BIT = {"EQ", "NEQ", "LT", "LTE", "GT", "GTE", "LOGAND", "LOGOR", "LOGNOT",
            "REDAND", "REDOR", "REDXOR", "REDNAND", "REDNOR", "REDXNOR"}


def op_code(name: str) -> int:
    return OP_CODES.get(name, OP_CODES["OTHER"])


class _Builder:
    def __init__(self, design_id: str):
        self.design_id = design_id
        self.nodes: list[AstNode] = []
        self.edges: list[tuple[int, int]] = []
        self.links: list[tuple[int, int]] = []

    def add(self, cat: int, parent: int | None, op: str | None = None,
            in_bits: int = 0, out_bits: int = 0) -> int:
        code = op_code(op) if op else 0
        self.nodes.append(AstNode(cat, code, max(0, in_bits), max(0, out_bits)))
        idx = len(self.nodes) - 1
        if parent is not None:
            self.edges.append((parent, idx))
        return idx


class _Scope:
    """Variable-node table for one module body (top or inlined instance)."""

    def __init__(self, b: _Builder, m: VerilogModule, parent: int):
        self.b = b
        self.widths = m.widths()
        self.var: dict[str, int] = {}
        for p in m.ports:
            self.var[p.name] = b.add(VARIABLE, parent, in_bits=p.width, out_bits=p.width)
        for it in m.items:
            if isinstance(it, NetDecl):
                self.var[it.name] = b.add(VARIABLE, parent, in_bits=it.width, out_bits=it.width)

    # returns (node index, width)
    def expr(self, e, parent: int) -> tuple[int, int]:
        b = self.b
        if isinstance(e, Ident):
            v = self.var[e.name]
            b.edges.append((parent, v))
            return v, self.widths[e.name]
        if isinstance(e, Number):
            w = e.width or UNSIZED_WIDTH
            return b.add(CONSTANT, parent, in_bits=0, out_bits=w), w
        if isinstance(e, Unary):
            name = _UNARY[e.op]
            n = b.add(OPERATION, parent, name)
            _, w = self.expr(e.operand, n)
            out = 1 if name in _ONE_BIT else w
            self._bits(n, w, out)
            return n, out
        if isinstance(e, Binary):
            name = _BINARY[e.op]
            n = b.add(OPERATION, parent, name)
            _, wl = self.expr(e.left, n)
            _, wr = self.expr(e.right, n)
            if name in _ONE_BIT:
                out = 1
            elif name == "MUL":
                out = wl + wr
            elif name in ("SHL", "SHR", "ASHL", "ASHR"):
                out = wl
            else:
                out = max(wl, wr)
            self._bits(n, wl + wr, out)
            return n, out
        if isinstance(e, Ternary):
            n = b.add(OPERATION, parent, "COND")
            _, wc = self.expr(e.cond, n)
            _, wt = self.expr(e.then, n)
            _, wf = self.expr(e.other, n)
            out = max(wt, wf)
            self._bits(n, wc + wt + wf, out)
            return n, out
        if isinstance(e, Concat):
            n = b.add(OPERATION, parent, "CONCAT")
            total = sum(self.expr(x, n)[1] for x in e.items)
            self._bits(n, total, total)
            return n, total
        if isinstance(e, Replicate):
            n = b.add(OPERATION, parent, "REPLICATE")
            total = sum(self.expr(x, n)[1] for x in e.items)
            self._bits(n, total, total * e.count)
            return n, total * e.count
        if isinstance(e, BitSelect):
            n = b.add(OPERATION, parent, "BITSEL")
            _, wb = self.expr(e.base, n)
            _, wi = self.expr(e.index, n)
            self._bits(n, wb + wi, 1)
            return n, 1
        if isinstance(e, PartSelect):
            n = b.add(OPERATION, parent, "PARTSEL")
            _, wb = self.expr(e.base, n)
            w = abs(e.msb - e.lsb) + 1
            self._bits(n, wb, w)
            return n, w
        raise TypeError(f"unexpected expression node {type(e).__name__}")

    def _bits(self, n: int, in_bits: int, out_bits: int) -> None:
        nd = self.b.nodes[n]
        self.b.nodes[n] = AstNode(nd.category, nd.op_type, in_bits, out_bits)

    def targets(self, lhs) -> list[str]:
        if isinstance(lhs, Ident):
            return [lhs.name]
        if isinstance(lhs, (BitSelect, PartSelect)):
            return [lhs.base.name]
        if isinstance(lhs, Concat):
            return [t for x in lhs.items for t in self.targets(x)]
        raise TypeError(f"bad assignment target {type(lhs).__name__}")

    def lhs_width(self, lhs) -> int:
        if isinstance(lhs, Ident):
            return self.widths[lhs.name]
        if isinstance(lhs, BitSelect):
            return 1
        if isinstance(lhs, PartSelect):
            return abs(lhs.msb - lhs.lsb) + 1
        return sum(self.lhs_width(x) for x in lhs.items)

    def assignment(self, lhs, rhs, parent: int) -> int:
        b = self.b
        n = b.add(EDGE, parent)
        _, wr = self.expr(rhs, n)
        if not isinstance(lhs, Ident):
            # selects / concatenations on the target are structure too
            self.expr(lhs, n)
        self._bits(n, wr, self.lhs_width(lhs))
        for name in self.targets(lhs):
            b.links.append((n, self.var[name]))
        return n

    def stmts(self, body, parent: int) -> None:
        for s in body:
            self.stmt(s, parent)

    def stmt(self, s, parent: int) -> None:
        b = self.b
        if isinstance(s, ProcAssign):
            self.assignment(s.lhs, s.rhs, parent)
        elif isinstance(s, If):
            n = b.add(OPERATION, parent, "IF")
            _, wc = self.expr(s.cond, n)
            self._bits(n, wc, 0)
            self.stmts(s.then, n)
            self.stmts(s.other, n)
        elif isinstance(s, Case):
            n = b.add(OPERATION, parent, s.kind.upper())
            _, ws = self.expr(s.subject, n)
            self._bits(n, ws, 0)
            for item in s.items:
                for lab in item.labels:
                    self.expr(lab, n)
                self.stmts(item.body, n)
        else:
            raise TypeError(f"unexpected statement {type(s).__name__}")

    def items(self, m: VerilogModule, parent: int) -> None:
        b = self.b
        for it in m.items:
            if isinstance(it, ContAssign):
                self.assignment(it.lhs, it.rhs, parent)
            elif isinstance(it, Always):
                n = b.add(OPERATION, parent, "ALWAYS_FF" if it.clocked else "ALWAYS_COMB")
                win = 0
                for _, sig in it.events:
                    win += self.expr(Ident(sig), n)[1]
                self._bits(n, win, 0)
                self.stmts(it.body, n)
            elif isinstance(it, Instance):
                self.instance(it, m.library[it.module], parent)

    def instance(self, inst: Instance, sub: VerilogModule, parent: int) -> None:
        b = self.b
        n = b.add(OPERATION, parent, "INSTANCE", in_bits=sub.input_bits, out_bits=sub.output_bits)
        inner = _Scope(b, sub, n)
        inner.items(sub, n)
        if inst.connections and inst.connections[0][0] is None:
            pairs = [(sub.ports[i].name, e) for i, (_, e) in enumerate(inst.connections)]
        else:
            pairs = list(inst.connections)
        for port_name, e in pairs:
            if e is None:
                continue
            port = sub.port(port_name)
            if port.direction == "input":
                c = b.add(EDGE, n)
                _, w = self.expr(e, c)
                self._bits(c, w, port.width)
                b.links.append((c, inner.var[port_name]))
            else:
                # output/inout: the inner port drives the outer net
                c = b.add(EDGE, n)
                b.edges.append((c, inner.var[port_name]))
                if not isinstance(e, Ident):
                    self.expr(e, c)
                self._bits(c, port.width, self.lhs_width(e) if _is_lvalue(e) else port.width)
                if _is_lvalue(e):
                    for name in self.targets(e):
                        b.links.append((c, self.var[name]))


def _is_lvalue(e) -> bool:
    if isinstance(e, (Ident, BitSelect, PartSelect)):
        return True
    return isinstance(e, Concat) and all(_is_lvalue(x) for x in e.items)


def to_ast_graph(m: VerilogModule, design_id: str | None = None) -> AstGraph:
    b = _Builder(design_id or m.name)
    root = b.add(ROOT, None, in_bits=m.input_bits, out_bits=m.output_bits)
    scope = _Scope(b, m, root)
    scope.items(m, root)
    return AstGraph(b.design_id, b.nodes, b.edges, b.links)
