"""Parser for the program DSL and compiler to process automata.

Grammar (see README for the full description):

    program    := (shared_decl | process | spec_clause)*
    shared_decl:= "shared" IDENT "in" domain ("=" INT)? ";"
    domain     := "{" INT ".." INT "}" | "{" INT ("," INT)* "}"
    process    := "process" IDENT "{" (local_decl | stmt)* "}"
    local_decl := "local" IDENT "in" domain ("=" INT)? ";"
    stmt       := (("label")? IDENT ":")? simple ";"
                | "while" "(" expr ")" block
                | "if" "(" expr ")" block ("else" block)?
    simple     := IDENT ":=" expr | "assume" "(" expr ")" | "fence"
    block      := "{" stmt* "}"
    spec_clause:= "error" ":" etuple ("||" etuple)* ";"
                | ("@terminal")? "assert" "(" expr ")" ";"
    etuple     := "(" IDENT "@" IDENT ("&&" IDENT "@" IDENT)* ")"

Structured control flow compiles to automaton states with assume-labeled
edges.  Loop and branch conditions may mention shared variables; each shared
occurrence is hoisted into a fresh read of the variable into a compiler
temporary (re-read on every evaluation of the condition), because assume
instructions themselves must be over locals only.  Explicit labels are
allowed on simple statements and name the transition; `P@L` in an error
clause denotes control being at the source state of that transition.

Comments: `//` and `#` to end of line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .model import (
    Assume,
    BinOp,
    Const,
    ErrorStates,
    Expr,
    Fence,
    LocalAssign,
    Program,
    ProcessAutomaton,
    SharedRead,
    SharedWrite,
    StateAssert,
    UnOp,
    Var,
    VarDecl,
    free_vars,
    negate,
    substitute,
    validate,
)


class ParseError(Exception):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|\#[^\n]*)
  | (?P<num>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|\.\.|==|!=|<=|>=|&&|\|\||[-+*/%<>=&|!(){},;:@.])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "shared", "local", "process", "in", "while", "if", "else",
    "assume", "fence", "label", "error", "assert", "true", "false",
}


@dataclass
class Token:
    kind: str  # 'num' | 'ident' | 'op' | 'kw' | 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    toks = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = m.group(0)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            if kind == "ident" and lexeme in KEYWORDS:
                kind = "kw"
            toks.append(Token(kind, lexeme, line, col))
        nl = lexeme.count("\n")
        if nl:
            line += nl
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Source AST (kept on the Program for pretty printing)
# ---------------------------------------------------------------------------

@dataclass
class SAssign:
    label: str | None
    target: str
    expr: Expr

    def render(self, ind):
        return f"{ind}{_lbl(self.label)}{self.target} := {self.expr};"


@dataclass
class SAssume:
    label: str | None
    expr: Expr

    def render(self, ind):
        return f"{ind}{_lbl(self.label)}assume({self.expr});"


@dataclass
class SFence:
    label: str | None

    def render(self, ind):
        return f"{ind}{_lbl(self.label)}fence;"


@dataclass
class SWhile:
    cond: Expr
    body: list

    def render(self, ind):
        inner = "\n".join(s.render(ind + "  ") for s in self.body)
        return f"{ind}while ({self.cond}) {{\n{inner}\n{ind}}}"


@dataclass
class SIf:
    cond: Expr
    then: list
    other: list

    def render(self, ind):
        t = "\n".join(s.render(ind + "  ") for s in self.then)
        out = f"{ind}if ({self.cond}) {{\n{t}\n{ind}}}"
        if self.other:
            e = "\n".join(s.render(ind + "  ") for s in self.other)
            out += f" else {{\n{e}\n{ind}}}"
        return out


def _lbl(label):
    return f"{label}: " if label else ""


@dataclass
class SProcess:
    tid: str
    decls: list[VarDecl]
    body: list

    def render(self):
        lines = [f"process {self.tid} {{"]
        for d in self.decls:
            lines.append(f"  local {d.name} in {_dom(d.domain)} = {d.init};")
        for s in self.body:
            lines.append(s.render("  "))
        lines.append("}")
        return "\n".join(lines)


@dataclass
class SourceTree:
    shared: list[VarDecl]
    processes: list[SProcess]
    spec_text: str | None

    def render(self):
        lines = [f"shared {d.name} in {_dom(d.domain)} = {d.init};" for d in self.shared]
        for p in self.processes:
            lines.append("")
            lines.append(p.render())
        if self.spec_text:
            lines.append("")
            lines.append(self.spec_text)
        return "\n".join(lines) + "\n"


def _dom(domain: frozenset[int]) -> str:
    vals = sorted(domain)
    if vals == list(range(vals[0], vals[-1] + 1)) and len(vals) > 1:
        return f"{{{vals[0]}..{vals[-1]}}}"
    return "{" + ", ".join(str(v) for v in vals) + "}"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # -- token plumbing ------------------------------------------------

    def peek(self, ahead=0) -> Token:
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.next()
        if t.text != text:
            raise ParseError(f"expected {text!r}, found {t.text!r}", t.line, t.col)
        return t

    def expect_ident(self) -> Token:
        t = self.next()
        if t.kind != "ident":
            raise ParseError(f"expected identifier, found {t.text!r}", t.line, t.col)
        return t

    def err(self, msg: str):
        t = self.peek()
        raise ParseError(msg, t.line, t.col)

    # -- top level -------------------------------------------------------

    def parse(self) -> SourceTree:
        shared: list[VarDecl] = []
        procs: list[SProcess] = []
        spec_text = None
        while self.peek().kind != "eof":
            t = self.peek()
            if t.text == "shared":
                shared.append(self.shared_decl())
            elif t.text == "process":
                procs.append(self.process())
            elif t.text in ("error", "assert") or t.text == "@":
                if spec_text is not None:
                    self.err("duplicate specification clause")
                spec_text = self.spec_clause_text()
            else:
                self.err(f"expected declaration, process or spec, found {t.text!r}")
        return SourceTree(shared, procs, spec_text)

    def shared_decl(self) -> VarDecl:
        self.expect("shared")
        name = self.expect_ident().text
        self.expect("in")
        domain = self.domain()
        init = 0
        if self.peek().text == "=":
            self.next()
            init = self.int_lit()
        self.expect(";")
        return VarDecl(name, domain, init, owner=None)

    def domain(self) -> frozenset[int]:
        self.expect("{")
        lo = self.int_lit()
        if self.peek().text == "..":
            self.next()
            hi = self.int_lit()
            self.expect("}")
            if hi < lo:
                self.err("empty range domain")
            return frozenset(range(lo, hi + 1))
        vals = {lo}
        while self.peek().text == ",":
            self.next()
            vals.add(self.int_lit())
        self.expect("}")
        return frozenset(vals)

    def int_lit(self) -> int:
        neg = False
        if self.peek().text == "-":
            self.next()
            neg = True
        t = self.next()
        if t.kind != "num":
            raise ParseError(f"expected integer, found {t.text!r}", t.line, t.col)
        return -int(t.text) if neg else int(t.text)

    def process(self) -> SProcess:
        self.expect("process")
        tid = self.expect_ident().text
        self.expect("{")
        decls: list[VarDecl] = []
        body: list = []
        while self.peek().text != "}":
            if self.peek().text == "local":
                if body:
                    self.err("local declarations must precede statements")
                self.next()
                name = self.expect_ident().text
                self.expect("in")
                domain = self.domain()
                init = 0
                if self.peek().text == "=":
                    self.next()
                    init = self.int_lit()
                self.expect(";")
                decls.append(VarDecl(name, domain, init, owner=tid))
            else:
                body.append(self.stmt())
        self.expect("}")
        return SProcess(tid, decls, body)

    # -- statements --------------------------------------------------------

    def stmt(self):
        t = self.peek()
        if t.text == "while":
            self.next()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            body = self.block()
            return SWhile(cond, body)
        if t.text == "if":
            self.next()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.block()
            other = []
            if self.peek().text == "else":
                self.next()
                other = self.block()
            return SIf(cond, then, other)

        label = None
        if t.text == "label":
            self.next()
            label = self.expect_ident().text
            self.expect(":")
        elif t.kind == "ident" and self.peek(1).text == ":":
            label = self.next().text
            self.next()

        t = self.peek()
        if t.text == "fence":
            self.next()
            self.expect(";")
            return SFence(label)
        if t.text == "assume":
            self.next()
            self.expect("(")
            e = self.expr()
            self.expect(")")
            self.expect(";")
            return SAssume(label, e)
        if t.kind == "ident":
            target = self.next().text
            self.expect(":=")
            e = self.expr()
            self.expect(";")
            return SAssign(label, target, e)
        self.err(f"expected a statement, found {t.text!r}")

    def block(self) -> list:
        self.expect("{")
        out = []
        while self.peek().text != "}":
            out.append(self.stmt())
        self.expect("}")
        return out

    # -- expressions (precedence climbing) ----------------------------------

    def expr(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        e = self.and_expr()
        while self.peek().text in ("|", "||"):
            self.next()
            e = BinOp("|", e, self.and_expr())
        return e

    def and_expr(self) -> Expr:
        e = self.cmp_expr()
        while self.peek().text in ("&", "&&"):
            self.next()
            e = BinOp("&", e, self.cmp_expr())
        return e

    def cmp_expr(self) -> Expr:
        e = self.add_expr()
        if self.peek().text in ("=", "==", "!=", "<", "<=", ">", ">="):
            op = self.next().text
            e = BinOp("=" if op == "==" else op, e, self.add_expr())
        return e

    def add_expr(self) -> Expr:
        e = self.mul_expr()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            e = BinOp(op, e, self.mul_expr())
        return e

    def mul_expr(self) -> Expr:
        e = self.unary()
        while self.peek().text in ("*", "/", "%"):
            op = self.next().text
            e = BinOp(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        t = self.peek()
        if t.text == "!":
            self.next()
            return UnOp("!", self.unary())
        if t.text == "-":
            self.next()
            return UnOp("-", self.unary())
        return self.atom()

    def atom(self) -> Expr:
        t = self.next()
        if t.kind == "num":
            return Const(int(t.text))
        if t.text == "true":
            return Const(1)
        if t.text == "false":
            return Const(0)
        if t.kind == "ident":
            # qualified local reference P.l, used in spec clauses
            if self.peek().text == "." and self.peek(1).kind == "ident":
                self.next()
                member = self.next().text
                return Var(f"{t.text}.{member}")
            return Var(t.text)
        if t.text == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"expected an expression, found {t.text!r}", t.line, t.col)

    # -- spec clauses -------------------------------------------------------

    def spec_clause_text(self) -> str:
        # capture the raw token span so the source tree can reproduce it
        start = self.i
        self.spec_clause_skip()
        return _render_tokens(self.toks[start:self.i])

    def spec_clause_skip(self):
        t = self.peek()
        if t.text == "@":
            self.next()
            w = self.expect_ident()
            if w.text != "terminal":
                raise ParseError("only @terminal is supported", w.line, w.col)
            t = self.peek()
        if t.text == "assert":
            self.next()
            self.expect("(")
            depth = 1
            while depth:
                tok = self.next()
                if tok.kind == "eof":
                    self.err("unterminated assert spec")
                if tok.text == "(":
                    depth += 1
                elif tok.text == ")":
                    depth -= 1
            self.expect(";")
            return
        if t.text == "error":
            self.next()
            self.expect(":")
            while self.peek().text != ";":
                if self.peek().kind == "eof":
                    self.err("unterminated error spec")
                self.next()
            self.expect(";")
            return
        self.err("expected a specification clause")


def _render_tokens(toks: list[Token]) -> str:
    parts = []
    for t in toks:
        if parts and t.text not in (";", ")", ",", "@", ":", ".") and parts[-1] not in ("(", "@", "."):
            parts.append(" ")
        parts.append(t.text)
    return "".join(parts)


# ---------------------------------------------------------------------------
# Compilation: source tree -> process automata
# ---------------------------------------------------------------------------

class _ProcCompiler:
    def __init__(self, tid: str, program_builder: "_Builder"):
        self.tid = tid
        self.b = program_builder
        self.nstates = 1  # state 0 is initial
        self.edges: list[tuple[int, str, int]] = []
        self.autolabel = 0
        self.tempno = 0

    def fresh_state(self) -> int:
        q = self.nstates
        self.nstates += 1
        return q

    def fresh_label(self) -> str:
        # '.' cannot appear in user identifiers, so generated labels never clash
        a = f"{self.tid}.{self.autolabel}"
        self.autolabel += 1
        return a

    def add_edge(self, q, ins, q2, label=None) -> str:
        a = label if label is not None else self.fresh_label()
        if a in self.b.ins:
            raise ParseError(f"duplicate label {a!r}", 0, 0)
        self.b.ins[a] = ins
        self.b.label_tid[a] = self.tid
        self.edges.append((q, a, q2))
        return a

    def hoist(self, cond: Expr, q: int) -> tuple[Expr, int]:
        """Read each shared variable of cond into a fresh temporary.

        Returns the rewritten condition and the state after the reads.  The
        reads re-execute on every evaluation of the condition, which is what
        a busy-wait loop means.
        """
        mapping: dict[str, Expr] = {}
        for v in _ordered_vars(cond):
            if v in self.b.shared and v not in mapping:
                tmp = f"__{self.tid}_c{self.tempno}"
                self.tempno += 1
                decl = self.b.shared[v]
                self.b.locals_[tmp] = VarDecl(tmp, decl.domain, decl.init,
                                              owner=self.tid, generated=True)
                q2 = self.fresh_state()
                self.add_edge(q, SharedRead(tmp, v), q2)
                q = q2
                mapping[v] = Var(tmp)
        return (substitute(cond, mapping), q) if mapping else (cond, q)

    def compile_body(self, stmts: list, q: int) -> int:
        for s in stmts:
            q = self.compile_stmt(s, q)
        return q

    def compile_stmt(self, s, q: int) -> int:
        if isinstance(s, SAssign):
            ins = self.b.classify_assign(self.tid, s.target, s.expr)
            q2 = self.fresh_state()
            a = self.add_edge(q, ins, q2, label=s.label)
            self.b.label_entry[a] = q
            return q2
        if isinstance(s, SAssume):
            q2 = self.fresh_state()
            a = self.add_edge(q, Assume(s.expr), q2, label=s.label)
            self.b.label_entry[a] = q
            return q2
        if isinstance(s, SFence):
            q2 = self.fresh_state()
            a = self.add_edge(q, Fence(), q2, label=s.label)
            self.b.label_entry[a] = q
            return q2
        if isinstance(s, SWhile):
            return self.compile_while(s, q)
        if isinstance(s, SIf):
            return self.compile_if(s, q)
        raise TypeError(f"unknown statement {s!r}")

    def compile_while(self, s: SWhile, q_head: int) -> int:
        if isinstance(s.cond, Const):
            if s.cond.value == 0:
                return q_head  # body unreachable
            # infinite loop: body cycles back, no exit state
            q_end = self.compile_body(s.body, q_head)
            self._merge_state(q_end, q_head)
            return self.fresh_state()  # unreachable exit, keeps callers simple
        cond, q_test = self.hoist(s.cond, q_head)
        q_body = self.fresh_state()
        q_exit = self.fresh_state()
        self.add_edge(q_test, Assume(cond), q_body)
        self.add_edge(q_test, Assume(negate(cond)), q_exit)
        q_end = self.compile_body(s.body, q_body)
        self._merge_state(q_end, q_head)
        return q_exit

    def compile_if(self, s: SIf, q: int) -> int:
        if isinstance(s.cond, Const):
            branch = s.then if s.cond.value != 0 else s.other
            return self.compile_body(branch, q)
        cond, q_test = self.hoist(s.cond, q)
        q_then = self.fresh_state()
        q_else = self.fresh_state()
        self.add_edge(q_test, Assume(cond), q_then)
        self.add_edge(q_test, Assume(negate(cond)), q_else)
        q_join = self.compile_body(s.then, q_then)
        if s.other:
            q_join2 = self.compile_body(s.other, q_else)
            self._merge_state(q_join2, q_join)
        else:
            self._merge_state(q_else, q_join)
        return q_join

    def _merge_state(self, q_from: int, q_into: int):
        """Redirect q_from to q_into (loop back-edges, branch joins)."""
        if q_from == q_into:
            return
        self.edges = [
            (q_into if q == q_from else q, a, q_into if q2 == q_from else q2)
            for (q, a, q2) in self.edges
        ]
        for lbl, q in self.b.label_entry.items():
            # entries are per-process state ids: only this process's labels
            if q == q_from and self.b.label_tid.get(lbl) == self.tid:
                self.b.label_entry[lbl] = q_into

    def finish(self, q0: int = 0) -> ProcessAutomaton:
        used = {q0}
        for (q, _a, q2) in self.edges:
            used.add(q)
            used.add(q2)
        return ProcessAutomaton(self.tid, frozenset(used), q0, tuple(self.edges))


def _ordered_vars(e: Expr) -> list[str]:
    """Free variables in first-occurrence order (deterministic hoisting)."""
    out: list[str] = []

    def walk(x):
        if isinstance(x, Var):
            if x.name not in out:
                out.append(x.name)
        elif isinstance(x, UnOp):
            walk(x.arg)
        elif isinstance(x, BinOp):
            walk(x.left)
            walk(x.right)

    walk(e)
    return out


class _Builder:
    def __init__(self):
        self.shared: dict[str, VarDecl] = {}
        self.locals_: dict[str, VarDecl] = {}
        self.ins: dict[str, object] = {}
        self.label_tid: dict[str, str] = {}
        self.label_entry: dict[str, int] = {}  # label -> source control state

    def classify_assign(self, tid: str, target: str, expr: Expr):
        if target in self.shared:
            return SharedWrite(target, expr)
        if target in self.locals_:
            if isinstance(expr, Var) and expr.name in self.shared:
                return SharedRead(target, expr.name)
            return LocalAssign(target, expr)
        raise ParseError(f"assignment to undeclared variable {target!r}", 0, 0)


def parse_program(text: str) -> Program:
    """Parse and validate DSL source into a Program."""
    tree = _Parser(text).parse()
    b = _Builder()
    for d in tree.shared:
        if d.name in b.shared:
            raise ParseError(f"duplicate shared declaration {d.name!r}", 0, 0)
        b.shared[d.name] = d

    processes: dict[str, ProcessAutomaton] = {}
    for sp in tree.processes:
        if sp.tid in processes:
            raise ParseError(f"duplicate process {sp.tid!r}", 0, 0)
        for d in sp.decls:
            if d.name in b.locals_ or d.name in b.shared:
                raise ParseError(f"duplicate variable declaration {d.name!r}", 0, 0)
            b.locals_[d.name] = d
        pc = _ProcCompiler(sp.tid, b)
        pc.compile_body(sp.body, 0)
        processes[sp.tid] = pc.finish()

    program = Program(
        processes=processes,
        shared=b.shared,
        locals_=b.locals_,
        ins=dict(b.ins),
        label_tid=dict(b.label_tid),
        spec=None,
        source=tree,
        label_entry=dict(b.label_entry),
    )
    if tree.spec_text:
        program.spec = parse_spec_clause(tree.spec_text, program)
    validate(program)
    return program


def parse_spec_clause(text: str, program: Program) -> StateAssert | ErrorStates:
    """Parse a stand-alone spec clause against an existing program.

    Used both for in-file clauses and for the CLI --spec override.
    """
    p = _Parser(text if text.rstrip().endswith(";") else text + ";")
    t = p.peek()
    terminal = False
    if t.text == "@":
        p.next()
        w = p.expect_ident()
        if w.text != "terminal":
            raise ParseError("only @terminal is supported", w.line, w.col)
        terminal = True
    t = p.peek()
    if t.text == "assert":
        p.next()
        p.expect("(")
        e = p.expr()
        p.expect(")")
        p.expect(";")
        e = _resolve_spec_vars(e, program)
        return StateAssert(e, terminal_only=terminal)
    if t.text == "error":
        if terminal:
            raise ParseError("@terminal applies to assert specs only", t.line, t.col)
        p.next()
        p.expect(":")
        tuples = [_parse_error_tuple(p, program)]
        while p.peek().text == "||":
            p.next()
            tuples.append(_parse_error_tuple(p, program))
        p.expect(";")
        return ErrorStates(tuple(tuples))
    raise ParseError("expected 'assert' or 'error' specification", t.line, t.col)


def _parse_error_tuple(p: _Parser, program: Program):
    p.expect("(")
    pairs = []
    while True:
        proc = p.expect_ident().text
        p.expect("@")
        label = p.expect_ident().text
        if proc not in program.processes:
            p.err(f"unknown process {proc!r} in error spec")
        if label not in program.label_entry or program.label_tid.get(label) != proc:
            p.err(f"unknown label {label!r} of process {proc}")
        pairs.append((proc, program.label_entry[label]))
        if p.peek().text != "&&":
            break
        p.next()
    p.expect(")")
    return tuple(pairs)


def _resolve_spec_vars(e: Expr, program: Program) -> Expr:
    """Collapse qualified P.l references and check every name is declared."""
    mapping: dict[str, Expr] = {}
    for name in free_vars(e):
        if "." in name:
            tid, local = name.split(".", 1)
            if tid not in program.processes:
                raise ParseError(f"unknown process {tid!r} in spec", 0, 0)
            decl = program.locals_.get(local)
            if decl is None or decl.owner != tid:
                raise ParseError(f"{local!r} is not a local of {tid}", 0, 0)
            mapping[name] = Var(local)
        elif name not in program.shared and name not in program.locals_:
            raise ParseError(f"spec mentions undeclared variable {name!r}", 0, 0)
    return substitute(e, mapping) if mapping else e
