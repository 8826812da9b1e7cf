"""Symbolic trace generation with local-variable instance renaming.

This is a second route to bounded-buffer reachability, used as an oracle
against the operational semantics.  Instead of carrying memory values,
states carry per-process buffers of *write labels* and an instance counter
Li for every local variable.  Each transition emits a label sequence; the
sequential execution (sc_interpret) of an emitted trace reproduces a
reachable memory state of the operational system.

The trick is the handling of a buffered write x := e: at the moment the
write is issued, each local variable l free in e is snapshotted into a
fresh instance l#i (i = Li(l), then bumped modulo k+1), and the buffered
label carries e with locals replaced by their snapshots.  When that label
is later emitted at flush time - possibly after l was overwritten - the
snapshot still holds the right value.  A buffered read of x emits a
synthesized label assigning the buffered write's (rewritten) expression
directly to the destination.  A fence resets the process's counters to 1;
within one bound at most k+1 instances per local can be live, so the
wrap-around never clobbers an instance still referenced by a buffered
write.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .model import (
    Assume,
    EvalError,
    Fence,
    Instruction,
    LocalAssign,
    Program,
    SharedRead,
    SharedWrite,
    Var,
    eval_expr,
    free_vars,
    substitute,
)


class SymState(NamedTuple):
    cs: tuple[int, ...]
    li: tuple[int, ...]                                  # per local, 1..k+1
    sbuff: tuple[tuple[tuple[str, str], ...], ...]       # per tid: ((shared var, write label), ...)


UNDEF = object()  # infeasible-trace marker returned by sc_interpret


def instance_name(local: str, i: int) -> str:
    # '#' is outside the identifier alphabet: user programs cannot collide
    return f"{local}#{i}"


class LabelRegistry:
    """Synthesized labels and their instructions, memoized.

    Requesting the same snapshot / rewritten write / inlined read twice
    yields the same label, so the label alphabet stays finite for a given
    bound.  Registration is idempotent, which also makes it safe under
    concurrent callers.
    """

    def __init__(self, program: Program):
        self.program = program
        self.ins: dict[str, Instruction] = dict(program.ins)
        self._rewritten: dict[tuple[str, tuple[tuple[str, int], ...]], str] = {}
        self._inlined: dict[tuple[str, str], str] = {}

    def instruction(self, label: str) -> Instruction:
        try:
            return self.ins[label]
        except KeyError:
            raise KeyError(f"label {label!r} is not registered") from None

    def snapshot(self, local: str, i: int) -> str:
        label = f"snap:{local}#{i}"
        if label not in self.ins:
            self.ins[label] = LocalAssign(instance_name(local, i), Var(local))
        return label

    def rewritten_write(self, write_label: str, subst: dict[str, int]) -> str:
        """Label for the write with each free local replaced by an instance."""
        key = (write_label, tuple(sorted(subst.items())))
        label = self._rewritten.get(key)
        if label is None:
            base = self.ins[write_label]
            assert isinstance(base, SharedWrite)
            mapping = {l: Var(instance_name(l, i)) for l, i in subst.items()}
            label = f"{write_label}[{','.join(f'{l}{i}' for l, i in key[1])}]"
            self.ins[label] = SharedWrite(base.var, substitute(base.expr, mapping))
            self._rewritten[key] = label
        return label

    def inlined_read(self, read_label: str, write_label: str) -> str:
        """Label assigning a buffered write's expression to a read target."""
        key = (read_label, write_label)
        label = self._inlined.get(key)
        if label is None:
            read = self.ins[read_label]
            write = self.ins[write_label]
            assert isinstance(read, SharedRead) and isinstance(write, SharedWrite)
            label = f"{read_label}<~{write_label}"
            self.ins[label] = LocalAssign(read.dest, write.expr)
            self._inlined[key] = label
        return label

    def size(self) -> int:
        return len(self.ins)


class SymMachine:
    """Program metadata for the symbolic transition relation."""

    def __init__(self, program: Program, registry: LabelRegistry | None = None):
        self.program = program
        self.registry = registry or LabelRegistry(program)
        self.tids = tuple(program.processes)
        self.local_names = tuple(n for tid in self.tids for n in program.locals_of(tid))
        self.local_pos = {n: i for i, n in enumerate(self.local_names)}
        self.locals_by_tid = {tid: tuple(program.locals_of(tid)) for tid in self.tids}
        # free locals of write expressions in declaration order
        self._write_fv: dict[str, tuple[str, ...]] = {}
        for label, ins in program.ins.items():
            if isinstance(ins, SharedWrite):
                fv = free_vars(ins.expr)
                self._write_fv[label] = tuple(n for n in self.local_names if n in fv)

    def initial_state(self) -> SymState:
        cs = tuple(self.program.processes[t].q0 for t in self.tids)
        li = tuple(1 for _ in self.local_names)
        return SymState(cs, li, tuple(() for _ in self.tids))

    def successors(self, s: SymState, k: int):
        """Enabled symbolic transitions as (emitted labels, state) pairs."""
        reg = self.registry
        out = []
        cs, li, sbuff = s
        for ti, tid in enumerate(self.tids):
            buf = sbuff[ti]
            for (q, a, q2) in sorted(self.program.processes[tid].edges, key=lambda t: t[1]):
                if q != cs[ti]:
                    continue
                ins = self.program.ins[a]
                cs2 = cs[:ti] + (q2,) + cs[ti + 1:]
                if isinstance(ins, SharedWrite):
                    if k > 0 and len(buf) >= k:
                        continue
                    emitted = []
                    subst = {}
                    li2 = list(li)
                    for l in self._write_fv[a]:
                        pos = self.local_pos[l]
                        idx = li[pos]
                        emitted.append(reg.snapshot(l, idx))
                        subst[l] = idx
                        li2[pos] = idx % (k + 1) + 1
                    wlabel = reg.rewritten_write(a, subst) if subst else a
                    if k == 0:
                        # write-through, as in the operational system
                        out.append((tuple(emitted) + (wlabel,),
                                    SymState(cs2, tuple(li2), sbuff)))
                    else:
                        nb = sbuff[:ti] + (buf + ((ins.var, wlabel),),) + sbuff[ti + 1:]
                        out.append((tuple(emitted), SymState(cs2, tuple(li2), nb)))
                elif isinstance(ins, SharedRead):
                    last = None
                    for (x, b) in reversed(buf):
                        if x == ins.var:
                            last = b
                            break
                    if last is None:
                        out.append(((a,), SymState(cs2, li, sbuff)))
                    else:
                        c = reg.inlined_read(a, last)
                        out.append(((c,), SymState(cs2, li, sbuff)))
                elif isinstance(ins, LocalAssign):
                    out.append(((a,), SymState(cs2, li, sbuff)))
                elif isinstance(ins, Assume):
                    # feasibility is deferred to sequential interpretation
                    out.append(((a,), SymState(cs2, li, sbuff)))
                elif isinstance(ins, Fence):
                    if buf:
                        continue
                    li2 = list(li)
                    for l in self.locals_by_tid[tid]:
                        li2[self.local_pos[l]] = 1
                    out.append(((), SymState(cs2, tuple(li2), sbuff)))
            if buf:
                (x, b) = buf[0]
                nb = sbuff[:ti] + (buf[1:],) + sbuff[ti + 1:]
                out.append(((b,), SymState(cs, li, nb)))
        return out

    def check_wraparound(self, s: SymState):
        """Assert that no live instance index occurs in a buffered write.

        For every local l with Li(l)=m, the instance l#m must not appear in
        any write expression currently buffered by l's owner; a violation
        would let a future snapshot clobber a value still pending.
        """
        for ti, tid in enumerate(self.tids):
            if not s.sbuff[ti]:
                continue
            mentioned: set[str] = set()
            for (_x, b) in s.sbuff[ti]:
                ins = self.registry.instruction(b)
                if isinstance(ins, SharedWrite):
                    mentioned |= free_vars(ins.expr)
            for l in self.locals_by_tid[tid]:
                m = s.li[self.local_pos[l]]
                if instance_name(l, m) in mentioned:
                    raise WraparoundViolation(tid, l, m)


class WraparoundViolation(AssertionError):
    def __init__(self, tid: str, local: str, index: int):
        super().__init__(f"live instance {local}#{index} of {tid} appears in a buffered write")
        self.tid = tid
        self.local = local
        self.index = index


# ---------------------------------------------------------------------------
# Sequential interpretation
# ---------------------------------------------------------------------------

def sc_interpret(labels, program: Program, registry: LabelRegistry):
    """Execute a label sequence sequentially from initial values.

    Returns (gm, lm) dicts over the program's base variables, or UNDEF when
    an assume fails, an evaluation errors out, or an assignment would leave
    its target's domain (infeasible trace).  Unregistered labels raise.
    """
    env: dict[str, int] = {}
    for n, d in program.shared.items():
        env[n] = d.init
    for n, d in program.locals_.items():
        env[n] = d.init
    # instance variables default to their base local's initial value
    base_domain = dict(program.locals_)

    for label in labels:
        ins = registry.instruction(label)
        if isinstance(ins, Assume):
            try:
                if eval_expr(ins.expr, _InstanceEnv(env, program)) == 0:
                    return UNDEF
            except EvalError:
                return UNDEF
        elif isinstance(ins, Fence):
            continue
        elif isinstance(ins, SharedWrite):
            try:
                v = eval_expr(ins.expr, _InstanceEnv(env, program))
            except EvalError:
                return UNDEF
            if v not in program.shared[ins.var].domain:
                return UNDEF
            env[ins.var] = v
        elif isinstance(ins, SharedRead):
            v = env[ins.var]
            if v not in program.locals_[ins.dest].domain:
                return UNDEF
            env[ins.dest] = v
        elif isinstance(ins, LocalAssign):
            try:
                v = eval_expr(ins.expr, _InstanceEnv(env, program))
            except EvalError:
                return UNDEF
            base = ins.dest.split("#", 1)[0]
            decl = base_domain.get(base)
            if decl is not None and v not in decl.domain:
                return UNDEF
            env[ins.dest] = v
        else:
            raise TypeError(f"unknown instruction {ins!r}")

    gm = {n: env[n] for n in program.shared}
    lm = {n: env[n] for n in program.locals_}
    return gm, lm


class _InstanceEnv:
    """Name lookup that falls back to a base local's initial value for
    never-assigned instance variables."""

    def __init__(self, env: dict[str, int], program: Program):
        self.env = env
        self.program = program

    def __getitem__(self, name: str) -> int:
        v = self.env.get(name)
        if v is not None:
            return v
        base = name.split("#", 1)[0]
        return self.program.locals_[base].init


# ---------------------------------------------------------------------------
# Reachability through the symbolic system
# ---------------------------------------------------------------------------

@dataclass
class SymbolicReachResult:
    outcomes: set          # {(gm tuple, lm tuple)} over base variables
    complete: bool
    states: int
    registry_size: int
    wraparound_checked: int = 0


def symbolic_reach(program: Program, k: int, budget: int = 1_000_000) -> SymbolicReachResult:
    """Memory states reachable via feasible symbolic traces at bound k.

    Explores the product of symbolic states with an incrementally evaluated
    environment: each emitted label is interpreted the moment it enters the
    trace, so the (gm, lm) of a product state is exactly the sequential
    interpretation of the trace emitted so far.  Infeasible emissions
    (failed assume, domain exit, evaluation error) are pruned.  The
    wrap-around invariant is asserted on every visited symbolic state.
    """
    sm = SymMachine(program)
    reg = sm.registry
    shared_names = tuple(program.shared)
    local_names = tuple(program.locals_)

    def outcome(env):
        return (
            tuple(env[n] for n in shared_names),
            tuple(env[n] for n in local_names),
        )

    env0: dict[str, int] = {}
    for n, d in program.shared.items():
        env0[n] = d.init
    for n, d in program.locals_.items():
        env0[n] = d.init

    init = (sm.initial_state(), tuple(sorted(env0.items())))
    seen = {init}
    from collections import deque
    queue = deque([init])
    outcomes = {outcome(env0)}
    checked = 0
    complete = True

    while queue:
        sym, env_items = queue.popleft()
        sm.check_wraparound(sym)
        checked += 1
        env = dict(env_items)
        for (emitted, sym2) in sm.successors(sym, k):
            env2 = _apply_labels(env, emitted, program, reg)
            if env2 is UNDEF:
                continue
            key = (sym2, tuple(sorted(env2.items())))
            if key in seen:
                continue
            seen.add(key)
            if len(seen) > budget:
                complete = False
                queue.clear()
                break
            outcomes.add(outcome(env2))
            queue.append(key)

    return SymbolicReachResult(outcomes, complete, len(seen), reg.size(), checked)


def symbolic_successors(s: SymState, program: Program, k: int,
                        registry: LabelRegistry | None = None):
    """One-shot successor enumeration; prefer SymMachine for repeated use
    (it keeps the memoized label registry)."""
    return SymMachine(program, registry).successors(s, k)


def export_trace_automaton(program: Program, k: int, budget: int = 1_000_000) -> str:
    """Textual dump of the symbolic transition system at bound k.

    One line per transition: a numbered source state, the emitted label
    sequence (comma-separated, `-` when empty), and the target state.
    State 0 is initial.  Lines starting `ins` map every label appearing in
    the dump to its instruction, so downstream interleaving-trace tools can
    interpret the emissions without this package.
    """
    sm = SymMachine(program)
    init = sm.initial_state()
    number: dict[SymState, int] = {init: 0}
    order = [init]
    lines = []
    used_labels: set[str] = set()
    i = 0
    while i < len(order):
        s = order[i]
        i += 1
        for (emitted, s2) in sm.successors(s, k):
            if s2 not in number:
                if len(number) > budget:
                    raise MemoryError("symbolic state budget exceeded during export")
                number[s2] = len(number)
                order.append(s2)
            used_labels.update(emitted)
            body = ",".join(emitted) if emitted else "-"
            lines.append(f"{number[s]} {body} {number[s2]}")
    header = [f"ins {label} {sm.registry.instruction(label)}"
              for label in sorted(used_labels)]
    return "\n".join(header + lines) + "\n"


def _apply_labels(env: dict[str, int], labels, program: Program, registry: LabelRegistry):
    """Interpret emitted labels against an environment copy; UNDEF if infeasible."""
    cur = env
    copied = False
    for label in labels:
        ins = registry.instruction(label)
        if isinstance(ins, Assume):
            try:
                if eval_expr(ins.expr, _InstanceEnv(cur, program)) == 0:
                    return UNDEF
            except EvalError:
                return UNDEF
            continue
        if isinstance(ins, Fence):
            continue
        if not copied:
            cur = dict(cur)
            copied = True
        if isinstance(ins, SharedWrite):
            try:
                v = eval_expr(ins.expr, _InstanceEnv(cur, program))
            except EvalError:
                return UNDEF
            if v not in program.shared[ins.var].domain:
                return UNDEF
            cur[ins.var] = v
        elif isinstance(ins, SharedRead):
            v = cur[ins.var]
            if v not in program.locals_[ins.dest].domain:
                return UNDEF
            cur[ins.dest] = v
        elif isinstance(ins, LocalAssign):
            try:
                v = eval_expr(ins.expr, _InstanceEnv(cur, program))
            except EvalError:
                return UNDEF
            base = ins.dest.split("#", 1)[0]
            decl = program.locals_.get(base)
            if decl is not None and v not in decl.domain:
                return UNDEF
            cur[ins.dest] = v
        else:
            raise TypeError(f"unknown instruction {ins!r}")
    return cur if copied or not labels else dict(cur)
