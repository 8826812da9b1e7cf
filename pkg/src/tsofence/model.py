"""Program representation: process automata over a finite data domain.

A program is a set of processes, each a labeled automaton whose edges carry
one of five instruction forms: shared write, shared read, local assignment,
assume, fence.  Expressions are built from local variables and integer
constants only; every variable has a declared finite domain.  Booleans are
encoded as {0,1} integers.
"""

from __future__ import annotations

from dataclasses import dataclass, field


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: int

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class UnOp(Expr):
    op: str  # '!' or '-'
    arg: Expr

    def __str__(self):
        return f"{self.op}{_paren(self.arg)}"


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # + - * / % = != < <= > >= & |
    left: Expr
    right: Expr

    def __str__(self):
        return f"{_paren(self.left)} {self.op} {_paren(self.right)}"


def _paren(e: Expr) -> str:
    return f"({e})" if isinstance(e, BinOp) else str(e)


class EvalError(Exception):
    """Expression evaluation failed (division by zero)."""


def eval_expr(e: Expr, env) -> int:
    """Evaluate an expression under a name -> int mapping.

    '&', '|' and '!' are logical over the {0,1} encoding (any nonzero counts
    as true); '/' is floor division and raises EvalError on a zero divisor.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, UnOp):
        v = eval_expr(e.arg, env)
        if e.op == "!":
            return 0 if v != 0 else 1
        return -v
    if isinstance(e, BinOp):
        a = eval_expr(e.left, env)
        b = eval_expr(e.right, env)
        op = e.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise EvalError("division by zero")
            return a // b
        if op == "%":
            if b == 0:
                raise EvalError("modulo by zero")
            return a % b
        if op == "=":
            return 1 if a == b else 0
        if op == "!=":
            return 1 if a != b else 0
        if op == "<":
            return 1 if a < b else 0
        if op == "<=":
            return 1 if a <= b else 0
        if op == ">":
            return 1 if a > b else 0
        if op == ">=":
            return 1 if a >= b else 0
        if op == "&":
            return 1 if a != 0 and b != 0 else 0
        if op == "|":
            return 1 if a != 0 or b != 0 else 0
    raise TypeError(f"not an expression: {e!r}")


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, UnOp):
        return free_vars(e.arg)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    return set()


def substitute(e: Expr, mapping: dict[str, Expr]) -> Expr:
    """Replace variables by expressions, capture-free (flat namespace)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, UnOp):
        return UnOp(e.op, substitute(e.arg, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    return e


def negate(e: Expr) -> Expr:
    if isinstance(e, UnOp) and e.op == "!":
        return e.arg
    return UnOp("!", e)


def is_const(e: Expr) -> bool:
    return isinstance(e, Const)


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------

class Instruction:
    __slots__ = ()


@dataclass(frozen=True)
class SharedWrite(Instruction):
    var: str  # shared
    expr: Expr

    def __str__(self):
        return f"{self.var} := {self.expr}"


@dataclass(frozen=True)
class SharedRead(Instruction):
    dest: str  # local
    var: str   # shared

    def __str__(self):
        return f"{self.dest} := {self.var}"


@dataclass(frozen=True)
class LocalAssign(Instruction):
    dest: str  # local
    expr: Expr

    def __str__(self):
        return f"{self.dest} := {self.expr}"


@dataclass(frozen=True)
class Assume(Instruction):
    expr: Expr

    def __str__(self):
        return f"assume({self.expr})"


@dataclass(frozen=True)
class Fence(Instruction):
    def __str__(self):
        return "fence"


def instruction_loc(ins: Instruction) -> str | None:
    """The shared variable touched by an instruction, if any."""
    if isinstance(ins, SharedWrite):
        return ins.var
    if isinstance(ins, SharedRead):
        return ins.var
    return None


# ---------------------------------------------------------------------------
# Declarations, automata, programs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarDecl:
    name: str
    domain: frozenset[int]
    init: int
    owner: str | None = None   # process id for locals, None for shared
    generated: bool = False    # compiler temporary (hoisted condition read)

    @property
    def is_shared(self) -> bool:
        return self.owner is None


@dataclass(frozen=True)
class ProcessAutomaton:
    tid: str
    states: frozenset[int]
    q0: int
    edges: tuple[tuple[int, str, int], ...]  # (q, label, q')

    def outgoing(self, q: int):
        return [t for t in self.edges if t[0] == q]


@dataclass(frozen=True)
class ErrorStates:
    """Spec: control-state tuples, one (tid, state) pair per named process.

    Processes absent from a tuple are wildcards.  The property is violated
    when some tuple matches the current control-state vector.
    """
    tuples: tuple[tuple[tuple[str, int], ...], ...]


@dataclass(frozen=True)
class StateAssert:
    """Spec: boolean predicate over memories, violated where it evaluates false.

    Checked on every reachable state, or only on states with no successors
    when terminal_only is set.
    """
    expr: Expr
    terminal_only: bool = False


SafetySpec = ErrorStates | StateAssert


@dataclass
class Program:
    processes: dict[str, ProcessAutomaton]
    shared: dict[str, VarDecl]
    locals_: dict[str, VarDecl]      # local names are globally disjoint
    ins: dict[str, Instruction]      # total map label -> instruction
    label_tid: dict[str, str]
    spec: SafetySpec | None = None
    source: object = None            # structured source AST, kept for printing
    label_entry: dict[str, int] = field(default_factory=dict)  # label -> source state

    def tids(self) -> list[str]:
        return list(self.processes)

    def loc(self, label: str) -> str | None:
        return instruction_loc(self.ins[label])

    def locals_of(self, tid: str) -> list[str]:
        return [n for n, d in self.locals_.items() if d.owner == tid]

    def decl_of(self, name: str) -> VarDecl:
        if name in self.shared:
            return self.shared[name]
        return self.locals_[name]


class ValidationError(Exception):
    """Raised with one diagnostic line per violated invariant."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def validate(p: Program) -> None:
    """Check every structural invariant; collect all violations before raising."""
    problems: list[str] = []

    for name, decl in list(p.shared.items()) + list(p.locals_.items()):
        # double-underscore names are reserved for compiler temporaries
        if name.startswith("__") and not decl.generated:
            problems.append(f"variable name {name!r} uses the reserved '__' prefix")

    seen_labels: dict[str, str] = {}
    for tid, proc in p.processes.items():
        if proc.q0 not in proc.states:
            problems.append(f"{tid}: initial state {proc.q0} not in state set")
        for (q, a, q2) in proc.edges:
            if q not in proc.states or q2 not in proc.states:
                problems.append(f"{tid}: edge ({q},{a},{q2}) leaves the state set")
            if a in seen_labels:
                problems.append(f"label {a!r} used by both {seen_labels[a]} and {tid}")
            else:
                seen_labels[a] = tid
            if a not in p.ins:
                problems.append(f"label {a!r} has no instruction")

    for name, d in p.shared.items():
        if d.init not in d.domain:
            problems.append(f"shared {name}: initial value {d.init} outside domain")
    owners: dict[str, str] = {}
    for name, d in p.locals_.items():
        if d.init not in d.domain:
            problems.append(f"local {name}: initial value {d.init} outside domain")
        if d.owner not in p.processes:
            problems.append(f"local {name}: unknown owner {d.owner}")
        if name in p.shared:
            problems.append(f"{name} declared both shared and local")
        owners[name] = d.owner

    def check_expr_local(e: Expr, tid: str, where: str):
        for v in sorted(free_vars(e)):
            if v in p.shared:
                problems.append(f"{where}: shared variable {v} inside an expression")
            elif v not in p.locals_:
                problems.append(f"{where}: undeclared variable {v}")
            elif owners.get(v) != tid:
                problems.append(f"{where}: local {v} belongs to {owners.get(v)}, not {tid}")

    for label, ins in p.ins.items():
        tid = p.label_tid.get(label)
        if tid is None:
            problems.append(f"label {label!r} not attached to a process")
            continue
        where = f"{tid}/{label}"
        if isinstance(ins, SharedWrite):
            if ins.var not in p.shared:
                problems.append(f"{where}: write target {ins.var} is not a shared variable")
            check_expr_local(ins.expr, tid, where)
            if is_const(ins.expr) and ins.var in p.shared:
                if ins.expr.value not in p.shared[ins.var].domain:
                    problems.append(f"{where}: constant {ins.expr.value} outside domain of {ins.var}")
        elif isinstance(ins, SharedRead):
            if ins.var not in p.shared:
                problems.append(f"{where}: read source {ins.var} is not a shared variable")
            if ins.dest not in p.locals_ or owners.get(ins.dest) != tid:
                problems.append(f"{where}: read target {ins.dest} is not a local of {tid}")
        elif isinstance(ins, LocalAssign):
            if ins.dest not in p.locals_ or owners.get(ins.dest) != tid:
                problems.append(f"{where}: assignment target {ins.dest} is not a local of {tid}")
            check_expr_local(ins.expr, tid, where)
            if is_const(ins.expr) and ins.dest in p.locals_:
                if ins.expr.value not in p.locals_[ins.dest].domain:
                    problems.append(f"{where}: constant {ins.expr.value} outside domain of {ins.dest}")
        elif isinstance(ins, Assume):
            check_expr_local(ins.expr, tid, where)
        elif isinstance(ins, Fence):
            pass
        else:
            problems.append(f"{where}: unknown instruction {ins!r}")

    if isinstance(p.spec, ErrorStates):
        for tup in p.spec.tuples:
            for tid, q in tup:
                if tid not in p.processes:
                    problems.append(f"error spec names unknown process {tid}")
                elif q not in p.processes[tid].states:
                    problems.append(f"error spec references unknown state {q} of {tid}")
    elif isinstance(p.spec, StateAssert):
        for v in sorted(free_vars(p.spec.expr)):
            if v not in p.shared and v not in p.locals_:
                problems.append(f"assert spec mentions undeclared variable {v}")

    if problems:
        raise ValidationError(problems)


# ---------------------------------------------------------------------------
# Canonical form (structural program equality)
# ---------------------------------------------------------------------------

def canonical_form(p: Program):
    """A comparable encoding, invariant under state renumbering and
    renaming of auto-generated labels.

    States are renumbered in BFS order from q0 (edges visited in label-sorted
    order); labels are replaced by per-process visit indices.  Declarations,
    instructions and the spec are carried along structurally.
    """
    procs = []
    for tid in p.tids():
        proc = p.processes[tid]
        by_src: dict[int, list[tuple[str, int]]] = {}
        for (q, a, q2) in proc.edges:
            by_src.setdefault(q, []).append((a, q2))
        for lst in by_src.values():
            lst.sort(key=lambda t: _label_sort_key(p, t[0]))
        number = {proc.q0: 0}
        order = [proc.q0]
        i = 0
        while i < len(order):
            q = order[i]
            i += 1
            for (_a, q2) in by_src.get(q, ()):
                if q2 not in number:
                    number[q2] = len(number)
                    order.append(q2)
        edges = []
        for q in order:
            for (a, q2) in by_src.get(q, ()):
                edges.append((number[q], str(p.ins[a]), number.get(q2, -1)))
        procs.append((tid, tuple(edges)))

    decls = (
        tuple((n, tuple(sorted(d.domain)), d.init) for n, d in p.shared.items()),
        tuple((n, tuple(sorted(d.domain)), d.init, d.owner) for n, d in p.locals_.items()),
    )
    if isinstance(p.spec, ErrorStates):
        spec = ("error", p.spec.tuples)
    elif isinstance(p.spec, StateAssert):
        spec = ("assert", str(p.spec.expr), p.spec.terminal_only)
    else:
        spec = None
    return (tuple(procs), decls, spec)


def _label_sort_key(p: Program, label: str):
    return (str(p.ins[label]), label)


# ---------------------------------------------------------------------------
# Pretty printing (requires the structured source kept by the parser)
# ---------------------------------------------------------------------------

def pretty(p: Program) -> str:
    """Render a parsed program back to DSL text.

    Only available for programs that came out of the parser; automaton-level
    rewrites (fence insertion, constant-write expansion) drop the source tree.
    """
    if p.source is None:
        raise ValueError("program has no source tree to print")
    return p.source.render()
