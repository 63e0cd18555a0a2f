"""Recursive-descent parser for a synthesizable Verilog subset.

Supported: module headers with ANSI or plain port lists, scalar/vector
``wire``/``reg`` declarations, continuous ``assign``, ``always @(*)`` and
edge-triggered ``always`` blocks containing ``if``/``else``, ``case``
(``casez``/``casex``) and blocking/non-blocking assignments, the usual
unary/binary/reduction operators, ternaries, concatenation, replication,
bit and constant part selects, sized/unsized literals, and instantiation of
leaf modules defined in the same source.  Anything else raises
:class:`UnsupportedConstructError` naming the construct.
"""

from __future__ import annotations

from .errors import SemanticError, UnsupportedConstructError, VerilogSyntaxError
from .lexer import Token, parse_number, tokenize
from .syntax import (
    Always, Binary, BitSelect, Case, CaseItem, Concat, ContAssign, Ident, If, Instance,
    NetDecl, Number, PartSelect, Port, ProcAssign, Replicate, Span, Ternary, Unary,
    VerilogModule,
)

# binary precedence levels, lowest first
_BINARY_LEVELS: list[tuple[str, ...]] = [
    ("||",),
    ("&&",),
    ("|", "~|"),
    ("^", "~^", "^~"),
    ("&", "~&"),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("<<", ">>", "<<<", ">>>"),
    ("+", "-"),
    ("*", "/", "%"),
]
_UNARY_OPS = {"+", "-", "!", "~", "&", "|", "^", "~&", "~|", "~^", "^~"}
_DIRECTIONS = ("input", "output", "inout")


class _Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.i = 0

    # ---- token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def span(self) -> Span:
        return Span(self.tok.line, self.tok.col)

    def at(self, *texts: str) -> bool:
        return self.tok.kind in ("op", "kw") and self.tok.text in texts

    def accept(self, *texts: str) -> Token | None:
        if self.at(*texts):
            t = self.tok
            self.i += 1
            return t
        return None

    def fail(self, what: str, expected) -> VerilogSyntaxError:
        t = self.tok
        found = "end of input" if t.kind == "eof" else repr(t.text)
        return VerilogSyntaxError(f"unexpected {found} in {what}", t.line, t.col, frozenset(expected))

    def expect(self, text: str, what: str) -> Token:
        t = self.accept(text)
        if t is None:
            raise self.fail(what, {text})
        return t

    def ident(self, what: str) -> Token:
        if self.tok.kind != "id":
            raise self.fail(what, {"identifier"})
        t = self.tok
        self.i += 1
        return t

    # ---- top level

    def source(self) -> list[VerilogModule]:
        mods = []
        while self.tok.kind != "eof":
            if not self.at("module"):
                raise self.fail("source text", {"module"})
            mods.append(self.module())
        if not mods:
            raise VerilogSyntaxError("no module found", 1, 1, frozenset({"module"}))
        return mods

    def module(self) -> VerilogModule:
        sp = self.span()
        self.expect("module", "module header")
        name = self.ident("module header").text
        ports: list[Port] = []
        plain_names: list[tuple[str, Span]] = []
        if self.accept("("):
            if self.at(*_DIRECTIONS):
                ports = self.ansi_ports()
            elif not self.at(")"):
                while True:
                    t = self.ident("port list")
                    plain_names.append((t.text, Span(t.line, t.col)))
                    if not self.accept(","):
                        break
            self.expect(")", "port list")
        self.expect(";", "module header")
        items = []
        body_ports: dict[str, Port] = {}
        while not self.at("endmodule"):
            if self.tok.kind == "eof":
                raise self.fail(f"module {name}", {"endmodule"})
            if self.at(*_DIRECTIONS):
                if ports:
                    raise VerilogSyntaxError("port declaration in body of ANSI-style module",
                                             self.tok.line, self.tok.col)
                for p in self.body_port_decl():
                    if p.name in body_ports:
                        raise SemanticError(f"port {p.name!r} declared twice", p.span.line, p.span.col)
                    body_ports[p.name] = p
            else:
                items.extend(self.item())
        self.expect("endmodule", f"module {name}")
        if plain_names:
            for pname, psp in plain_names:
                if pname not in body_ports:
                    raise SemanticError(f"port {pname!r} has no direction declaration", psp.line, psp.col)
            extra = set(body_ports) - {n for n, _ in plain_names}
            if extra:
                raise SemanticError(f"direction declared for non-port {sorted(extra)[0]!r}", sp.line, sp.col)
            seen = set()
            for pname, psp in plain_names:
                if pname in seen:
                    raise SemanticError(f"duplicate port {pname!r}", psp.line, psp.col)
                seen.add(pname)
            ports = [body_ports[n] for n, _ in plain_names]
            # `output reg q;` followed by `reg q;` is legal: fold the reg decl into the port
            port_names = set(seen)
            kept = []
            for it in items:
                if isinstance(it, NetDecl) and it.name in port_names:
                    p = body_ports[it.name]
                    if it.width != p.width:
                        raise SemanticError(f"width of {it.name!r} redeclared", it.span.line, it.span.col)
                    continue
                kept.append(it)
            items = kept
        elif body_ports:
            raise SemanticError("port direction declared but module header lists no ports", sp.line, sp.col)
        mod = VerilogModule(name, ports, items, sp)
        _check_module(mod)
        return mod

    def ansi_ports(self) -> list[Port]:
        ports = []
        direction = None
        is_reg, width = False, 1
        while True:
            if self.at(*_DIRECTIONS):
                direction = self.tok.text
                self.i += 1
                is_reg = False
                if self.accept("wire"):
                    pass
                elif self.accept("reg"):
                    is_reg = True
                self.accept("signed")
                width = self.opt_range()
            t = self.ident("port declaration")
            ports.append(Port(t.text, direction, width, is_reg, Span(t.line, t.col)))
            if not self.accept(","):
                return ports

    def body_port_decl(self) -> list[Port]:
        direction = self.tok.text
        self.i += 1
        is_reg = False
        if self.accept("wire"):
            pass
        elif self.accept("reg"):
            is_reg = True
        self.accept("signed")
        width = self.opt_range()
        out = []
        while True:
            t = self.ident("port declaration")
            out.append(Port(t.text, direction, width, is_reg, Span(t.line, t.col)))
            if not self.accept(","):
                break
        self.expect(";", "port declaration")
        return out

    def opt_range(self) -> int:
        if not self.accept("["):
            return 1
        msb = self.const_expr()
        self.expect(":", "range")
        lsb = self.const_expr()
        self.expect("]", "range")
        return abs(msb - lsb) + 1

    def const_expr(self) -> int:
        sp = self.span()
        return _const_value(self.expr(), sp)

    # ---- module items

    def item(self) -> list:
        sp = self.span()
        if self.at("wire", "reg"):
            kind = self.tok.text
            self.i += 1
            self.accept("signed")
            width = self.opt_range()
            out = []
            while True:
                t = self.ident(f"{kind} declaration")
                tsp = Span(t.line, t.col)
                out.append(NetDecl(kind, t.text, width, tsp))
                if self.accept("="):
                    if kind == "reg":
                        raise UnsupportedConstructError("reg initializer", t.line, t.col)
                    out.append(ContAssign(Ident(t.text, tsp), self.expr(), tsp))
                if not self.accept(","):
                    break
            self.expect(";", f"{kind} declaration")
            return out
        if self.accept("assign"):
            out = []
            while True:
                asp = self.span()
                lhs = self.lvalue()
                self.expect("=", "continuous assignment")
                out.append(ContAssign(lhs, self.expr(), asp))
                if not self.accept(","):
                    break
            self.expect(";", "continuous assignment")
            return out
        if self.accept("always"):
            return [self.always(sp)]
        if self.tok.kind == "id":
            return self.instances()
        raise self.fail("module item", {"wire", "reg", "assign", "always", "input", "output",
                                        "inout", "endmodule", "identifier"})

    def always(self, sp: Span) -> Always:
        self.expect("@", "always block")
        events: list[tuple[str, str]] = []
        if self.accept("*"):
            pass
        else:
            self.expect("(", "sensitivity list")
            if self.accept("*"):
                pass
            else:
                while True:
                    edge = ""
                    if self.at("posedge", "negedge"):
                        edge = self.tok.text
                        self.i += 1
                    events.append((edge, self.ident("sensitivity list").text))
                    if not (self.accept("or") or self.accept(",")):
                        break
            self.expect(")", "sensitivity list")
        edges = {e for e, _ in events}
        if "" in edges and len(edges) > 1:
            raise UnsupportedConstructError("mixed edge and level sensitivity", sp.line, sp.col)
        clocked = bool(events) and "" not in edges
        return Always(clocked, tuple(events), self.stmt(), sp)

    def instances(self) -> list[Instance]:
        mod = self.ident("module instantiation").text
        if self.at("#"):
            raise UnsupportedConstructError("parameter override", self.tok.line, self.tok.col)
        out = []
        while True:
            sp = self.span()
            name = self.ident("module instantiation").text
            self.expect("(", "module instantiation")
            conns: list[tuple[str | None, object]] = []
            if not self.at(")"):
                while True:
                    if self.accept("."):
                        port = self.ident("named port connection").text
                        self.expect("(", "named port connection")
                        e = None if self.at(")") else self.expr()
                        self.expect(")", "named port connection")
                        conns.append((port, e))
                    else:
                        conns.append((None, self.expr()))
                    if not self.accept(","):
                        break
            self.expect(")", "module instantiation")
            if len({p is None for p, _ in conns}) > 1:
                raise VerilogSyntaxError("mixed named and positional port connections", sp.line, sp.col)
            out.append(Instance(mod, name, tuple(conns), sp))
            if not self.accept(","):
                break
        self.expect(";", "module instantiation")
        return out

    # ---- statements

    def stmt(self) -> tuple:
        sp = self.span()
        if self.accept("begin"):
            if self.accept(":"):
                self.ident("block label")
            body = []
            while not self.accept("end"):
                if self.tok.kind == "eof":
                    raise self.fail("begin/end block", {"end"})
                body.extend(self.stmt())
            return tuple(body)
        if self.accept(";"):
            return ()
        if self.accept("if"):
            self.expect("(", "if statement")
            cond = self.expr()
            self.expect(")", "if statement")
            then = self.stmt()
            other = self.stmt() if self.accept("else") else ()
            return (If(cond, then, other, sp),)
        if self.at("case", "casez", "casex"):
            kind = self.tok.text
            self.i += 1
            self.expect("(", "case statement")
            subject = self.expr()
            self.expect(")", "case statement")
            items = []
            while not self.accept("endcase"):
                if self.accept("default"):
                    self.accept(":")
                    items.append(CaseItem((), self.stmt()))
                    continue
                if self.tok.kind == "eof":
                    raise self.fail("case statement", {"endcase"})
                labels = [self.expr()]
                while self.accept(","):
                    labels.append(self.expr())
                self.expect(":", "case item")
                items.append(CaseItem(tuple(labels), self.stmt()))
            return (Case(kind, subject, tuple(items), sp),)
        if self.at("{") or self.tok.kind == "id":
            lhs = self.lvalue()
            if self.accept("="):
                blocking = True
            elif self.accept("<="):
                blocking = False
            else:
                raise self.fail("procedural assignment", {"=", "<="})
            rhs = self.expr()
            self.expect(";", "procedural assignment")
            return (ProcAssign(lhs, rhs, blocking, sp),)
        raise self.fail("statement", {"begin", "if", "case", "identifier", ";"})

    def lvalue(self):
        sp = self.span()
        if self.accept("{"):
            items = [self.lvalue()]
            while self.accept(","):
                items.append(self.lvalue())
            self.expect("}", "concatenation")
            return Concat(tuple(items), sp)
        return self.selectable(self.ident("assignment target"))

    def selectable(self, t: Token):
        base = Ident(t.text, Span(t.line, t.col))
        if not self.at("["):
            return base
        sp = self.span()
        self.i += 1
        first = self.expr()
        if self.at("+", "-") and self.peek().text == ":":
            raise UnsupportedConstructError("indexed part select", self.tok.line, self.tok.col)
        if self.accept(":"):
            msb = _const_value(first, sp)
            lsb = self.const_expr()
            self.expect("]", "part select")
            node = PartSelect(base, msb, lsb, sp)
        else:
            self.expect("]", "bit select")
            node = BitSelect(base, first, sp)
        if self.at("["):
            raise UnsupportedConstructError("multi-dimensional select", self.tok.line, self.tok.col)
        return node

    # ---- expressions

    def expr(self):
        sp = self.span()
        cond = self.binary(0)
        if self.accept("?"):
            then = self.expr()
            self.expect(":", "conditional expression")
            return Ternary(cond, then, self.expr(), sp)
        return cond

    def binary(self, level: int):
        if level == len(_BINARY_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while self.tok.kind == "op" and self.tok.text in _BINARY_LEVELS[level]:
            sp = self.span()
            op = self.tok.text
            self.i += 1
            left = Binary(op, left, self.binary(level + 1), sp)
        return left

    def unary(self):
        if self.tok.kind == "op" and self.tok.text in _UNARY_OPS:
            sp = self.span()
            op = self.tok.text
            self.i += 1
            return Unary(op, self.unary(), sp)
        return self.primary()

    def primary(self):
        t = self.tok
        sp = self.span()
        if t.kind == "num":
            self.i += 1
            width, value = parse_number(t.text)
            return Number(width, value, t.text, sp)
        if t.kind == "id":
            self.i += 1
            if self.at("("):
                raise UnsupportedConstructError(f"function call {t.text}", t.line, t.col)
            return self.selectable(t)
        if self.accept("("):
            e = self.expr()
            self.expect(")", "parenthesized expression")
            return e
        if self.accept("{"):
            first = self.expr()
            if self.accept("{"):
                count = _const_value(first, sp)
                if count < 1:
                    raise SemanticError("replication count must be positive", sp.line, sp.col)
                items = [self.expr()]
                while self.accept(","):
                    items.append(self.expr())
                self.expect("}", "replication")
                self.expect("}", "replication")
                return Replicate(count, tuple(items), sp)
            items = [first]
            while self.accept(","):
                items.append(self.expr())
            self.expect("}", "concatenation")
            return Concat(tuple(items), sp)
        raise self.fail("expression", {"identifier", "number", "(", "{", "unary operator"})


def _const_value(e, sp: Span) -> int:
    if isinstance(e, Number):
        return e.value
    if isinstance(e, Unary) and e.op in ("-", "+"):
        v = _const_value(e.operand, sp)
        return -v if e.op == "-" else v
    if isinstance(e, Binary) and e.op in ("+", "-", "*", "/", "%", "<<", ">>"):
        a, b = _const_value(e.left, sp), _const_value(e.right, sp)
        if e.op in ("/", "%") and b == 0:
            raise SemanticError("division by zero in constant expression", sp.line, sp.col)
        return {"+": a + b, "-": a - b, "*": a * b, "/": a // b if b else 0, "%": a % b if b else 0,
                "<<": a << b, ">>": a >> b}[e.op]
    raise UnsupportedConstructError("non-constant width or index expression", sp.line, sp.col)


# ---- semantic checks


def iter_expr_idents(e):
    if isinstance(e, Ident):
        yield e
    elif isinstance(e, (BitSelect,)):
        yield e.base
        yield from iter_expr_idents(e.index)
    elif isinstance(e, PartSelect):
        yield e.base
    elif isinstance(e, Unary):
        yield from iter_expr_idents(e.operand)
    elif isinstance(e, Binary):
        yield from iter_expr_idents(e.left)
        yield from iter_expr_idents(e.right)
    elif isinstance(e, Ternary):
        for sub in (e.cond, e.then, e.other):
            yield from iter_expr_idents(sub)
    elif isinstance(e, (Concat, Replicate)):
        for sub in e.items:
            yield from iter_expr_idents(sub)


def _stmt_exprs(stmts):
    for s in stmts:
        if isinstance(s, ProcAssign):
            yield s.lhs
            yield s.rhs
        elif isinstance(s, If):
            yield s.cond
            yield from _stmt_exprs(s.then)
            yield from _stmt_exprs(s.other)
        elif isinstance(s, Case):
            yield s.subject
            for it in s.items:
                yield from it.labels
                yield from _stmt_exprs(it.body)


def _check_module(m: VerilogModule) -> None:
    declared: dict[str, object] = {}
    for p in m.ports:
        if p.name in declared:
            raise SemanticError(f"duplicate port {p.name!r}", p.span.line, p.span.col)
        if p.width < 1:
            raise SemanticError(f"port {p.name!r} has width {p.width}", p.span.line, p.span.col)
        declared[p.name] = p
    for it in m.items:
        if isinstance(it, NetDecl):
            if it.name in declared:
                raise SemanticError(f"{it.name!r} declared twice", it.span.line, it.span.col)
            declared[it.name] = it
    inst_names = set()
    for it in m.items:
        if isinstance(it, ContAssign):
            exprs = [it.lhs, it.rhs]
        elif isinstance(it, Always):
            exprs = [Ident(sig, it.span) for _, sig in it.events] + list(_stmt_exprs(it.body))
        elif isinstance(it, Instance):
            if it.name in inst_names or it.name in declared:
                raise SemanticError(f"instance name {it.name!r} already used", it.span.line, it.span.col)
            inst_names.add(it.name)
            exprs = [e for _, e in it.connections if e is not None]
        else:
            continue
        for e in exprs:
            for ident in iter_expr_idents(e):
                if ident.name not in declared:
                    raise SemanticError(f"undeclared identifier {ident.name!r}",
                                        ident.span.line, ident.span.col)


def parse_modules(source: str) -> list[VerilogModule]:
    """Parse every module in ``source`` (no hierarchy resolution)."""
    return _Parser(source).source()


def parse(source: str, top: str | None = None) -> VerilogModule:
    """Parse ``source`` and return the top module (the last one unless ``top`` names one).

    Instantiated modules must be defined in the same source and must not
    instantiate anything themselves; they are attached as ``module.library``.
    """
    mods = parse_modules(source)
    by_name: dict[str, VerilogModule] = {}
    for m in mods:
        if m.name in by_name:
            raise SemanticError(f"module {m.name!r} defined twice", m.span.line, m.span.col)
        by_name[m.name] = m
    if top is None:
        root = mods[-1]
    elif top in by_name:
        root = by_name[top]
    else:
        raise SemanticError(f"top module {top!r} not found")
    for it in root.items:
        if not isinstance(it, Instance):
            continue
        sub = by_name.get(it.module)
        if sub is None:
            raise SemanticError(f"instance {it.name!r} of undefined module {it.module!r}",
                                it.span.line, it.span.col)
        if sub is root:
            raise SemanticError(f"module {root.name!r} instantiates itself", it.span.line, it.span.col)
        if any(isinstance(x, Instance) for x in sub.items):
            raise UnsupportedConstructError(f"nested module hierarchy in {sub.name}",
                                            it.span.line, it.span.col)
        names = {p.name for p in sub.ports}
        if it.connections and it.connections[0][0] is None:
            if len(it.connections) > len(sub.ports):
                raise SemanticError(f"too many connections for {sub.name}", it.span.line, it.span.col)
        else:
            for port, _ in it.connections:
                if port not in names:
                    raise SemanticError(f"{sub.name} has no port {port!r}", it.span.line, it.span.col)
        root.library[sub.name] = sub
    return root
