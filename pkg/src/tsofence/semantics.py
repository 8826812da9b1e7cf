"""Bounded store-buffer operational semantics.

A state is (cs, Lm, Gm, Buff): per-process control states, local memory,
global memory and per-process FIFO buffers of (variable, value) pairs, each
buffer capped at k entries.  Transitions:

  * buffered write  -- x := e appends (x, eval(e)) to the buffer, enabled
                       only while the buffer holds fewer than k entries;
  * buffered read   -- l := x takes the value of the newest buffered entry
                       for x in the process's own buffer, if any;
  * memory read     -- l := x reads global memory when the buffer holds no
                       entry for x;
  * local write     -- l := e updates local memory only;
  * assume          -- enabled iff the expression is true in local memory;
  * fence           -- enabled only on an empty buffer;
  * flush           -- nondeterministically removes the oldest buffer entry
                       of some process and applies it to global memory,
                       without moving control.

At k = 0 a write could never enter the buffer, so it is fused with its
flush: the write takes effect on global memory in one step, which makes the
k = 0 system coincide with plain interleaving (sequentially consistent)
execution.

Writes (and reads/assignments) whose value would fall outside the target
variable's declared domain are disabled rather than wrapped; a diagnostics
object, when supplied, counts such suppressions.  Division by zero likewise
disables the transition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

from .model import (
    Assume,
    BinOp,
    Const,
    EvalError,
    Expr,
    Fence,
    LocalAssign,
    Program,
    SharedRead,
    SharedWrite,
    UnOp,
    Var,
    eval_expr,
)

__all__ = [
    "Diagnostics", "Event", "Flush", "Machine", "Projected", "State",
    "Step", "compile_expr", "eval_expr", "initial_state", "project",
    "successors",
]


class State(NamedTuple):
    cs: tuple[int, ...]
    lm: tuple[int, ...]
    gm: tuple[int, ...]
    buffs: tuple[tuple[tuple[int, int], ...], ...]  # per tid: ((var_idx, value), ...)


class Projected(NamedTuple):
    """Restriction of a state to control, memories and last buffered writes.

    last_writes holds, per process, the (variable, value) of the most
    recently enqueued buffered write to each variable, sorted by variable
    index; processes with empty buffers contribute an empty tuple.
    """
    cs: tuple[int, ...]
    gm: tuple[int, ...]
    lm: tuple[int, ...]
    last_writes: tuple[tuple[tuple[int, int], ...], ...]


@dataclass(frozen=True)
class Step:
    tid: str
    label: str

    def render(self) -> str:
        return f"step {self.tid} {self.label}"


@dataclass(frozen=True)
class Flush:
    tid: str
    var: str
    value: int

    def render(self) -> str:
        return f"flush {self.tid} {self.var}={self.value}"


Event = Step | Flush


@dataclass
class Diagnostics:
    domain_violations: int = 0
    eval_errors: int = 0


# rule ranks fix the successor ordering within one process
_BWRITE, _BREAD, _MREAD, _LWRITE, _ASSUME, _FENCE = range(6)


def compile_expr(e: Expr, index: dict[str, int]):
    """Compile an expression over locals to a closure on the flat lm tuple."""
    src = _expr_src(e, index)
    return eval(f"lambda lm: {src}")  # noqa: S307 - source built from our own AST


def _expr_src(e: Expr, index: dict[str, int]) -> str:
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Var):
        return f"lm[{index[e.name]}]"
    if isinstance(e, UnOp):
        a = _expr_src(e.arg, index)
        return f"(0 if ({a}) != 0 else 1)" if e.op == "!" else f"(-({a}))"
    if isinstance(e, BinOp):
        a = _expr_src(e.left, index)
        b = _expr_src(e.right, index)
        op = e.op
        if op in ("+", "-", "*"):
            return f"(({a}) {op} ({b}))"
        if op == "/":
            return f"(({a}) // ({b}))"
        if op == "%":
            return f"(({a}) % ({b}))"
        if op == "=":
            return f"(1 if ({a}) == ({b}) else 0)"
        if op in ("!=", "<", "<=", ">", ">="):
            return f"(1 if ({a}) {op} ({b}) else 0)"
        if op == "&":
            return f"(1 if ({a}) != 0 and ({b}) != 0 else 0)"
        if op == "|":
            return f"(1 if ({a}) != 0 or ({b}) != 0 else 0)"
    raise TypeError(f"not an expression: {e!r}")


class Machine:
    """A program compiled for fast state-space exploration.

    Pure with respect to states: successors() builds new immutable states
    and never mutates shared structure (the optional diagnostics counter is
    caller-owned).
    """

    def __init__(self, program: Program):
        self.program = program
        self.tids: tuple[str, ...] = tuple(program.processes)
        self.shared_names: tuple[str, ...] = tuple(program.shared)
        self.shared_index = {n: i for i, n in enumerate(self.shared_names)}
        self.local_names: tuple[str, ...] = tuple(
            n for tid in self.tids for n in program.locals_of(tid)
        )
        self.local_index = {n: i for i, n in enumerate(self.local_names)}

        self.shared_domain = tuple(program.shared[n].domain for n in self.shared_names)
        self.local_domain = tuple(program.locals_[n].domain for n in self.local_names)
        self._gm0 = tuple(program.shared[n].init for n in self.shared_names)
        self._lm0 = tuple(program.locals_[n].init for n in self.local_names)

        # per tid: dict control state -> ordered compiled transitions
        self.table: list[dict[int, list]] = []
        for tid in self.tids:
            proc = program.processes[tid]
            by_q: dict[int, list] = {}
            for (q, a, q2) in sorted(proc.edges, key=lambda t: t[1]):
                by_q.setdefault(q, []).append(self._compile_edge(a, q2))
            self.table.append(by_q)

        self._spec_checker = _compile_spec(self) if program.spec is not None else None

    def _compile_edge(self, label: str, q2: int):
        ins = self.program.ins[label]
        if isinstance(ins, SharedWrite):
            x = self.shared_index[ins.var]
            fn = compile_expr(ins.expr, self.local_index)
            return ("W", label, q2, x, fn, self.shared_domain[x])
        if isinstance(ins, SharedRead):
            l = self.local_index[ins.dest]
            x = self.shared_index[ins.var]
            return ("R", label, q2, l, x, self.local_domain[l])
        if isinstance(ins, LocalAssign):
            l = self.local_index[ins.dest]
            fn = compile_expr(ins.expr, self.local_index)
            return ("L", label, q2, l, fn, self.local_domain[l])
        if isinstance(ins, Assume):
            return ("A", label, q2, compile_expr(ins.expr, self.local_index))
        if isinstance(ins, Fence):
            return ("F", label, q2)
        raise TypeError(f"unknown instruction for {label}: {ins!r}")

    # -- states ------------------------------------------------------------

    def initial_state(self, k: int) -> State:
        if k < 0:
            raise ValueError("buffer bound must be non-negative")
        cs = tuple(self.program.processes[t].q0 for t in self.tids)
        empty = tuple(() for _ in self.tids)
        return State(cs, self._lm0, self._gm0, empty)

    def successors(self, s: State, k: int, diag: Diagnostics | None = None):
        """All enabled transitions of s, as (event, state) pairs.

        Ordered by (process, rule, transition label): buffered writes first,
        then reads, local writes, assume, fence, and the process's flush
        last.  The order is total and deterministic, which the explorer
        relies on for reproducible counterexamples.
        """
        out = []
        cs, lm, gm, buffs = s
        for ti, tid in enumerate(self.tids):
            ranked = []
            buf = buffs[ti]
            for tr in self.table[ti].get(cs[ti], ()):
                kind = tr[0]
                label = tr[1]
                q2 = tr[2]
                if kind == "W":
                    _, _, _, x, fn, dom = tr
                    try:
                        v = fn(lm)
                    except (ZeroDivisionError, EvalError):
                        if diag:
                            diag.eval_errors += 1
                        continue
                    if v not in dom:
                        if diag:
                            diag.domain_violations += 1
                        continue
                    if k == 0:
                        # write-through: buffering impossible, flush fused in
                        gm2 = gm[:x] + (v,) + gm[x + 1:]
                        ranked.append((_BWRITE, label, Step(tid, label),
                                       State(_set(cs, ti, q2), lm, gm2, buffs)))
                    elif len(buf) < k:
                        nb = buffs[:ti] + (buf + ((x, v),),) + buffs[ti + 1:]
                        ranked.append((_BWRITE, label, Step(tid, label),
                                       State(_set(cs, ti, q2), lm, gm, nb)))
                elif kind == "R":
                    _, _, _, l, x, dom = tr
                    v = None
                    for (bx, bv) in reversed(buf):
                        if bx == x:
                            v = bv
                            break
                    if v is None:
                        rank = _MREAD
                        v = gm[x]
                    else:
                        rank = _BREAD
                    if v not in dom:
                        if diag:
                            diag.domain_violations += 1
                        continue
                    ranked.append((rank, label, Step(tid, label),
                                   State(_set(cs, ti, q2), _set(lm, l, v), gm, buffs)))
                elif kind == "L":
                    _, _, _, l, fn, dom = tr
                    try:
                        v = fn(lm)
                    except (ZeroDivisionError, EvalError):
                        if diag:
                            diag.eval_errors += 1
                        continue
                    if v not in dom:
                        if diag:
                            diag.domain_violations += 1
                        continue
                    ranked.append((_LWRITE, label, Step(tid, label),
                                   State(_set(cs, ti, q2), _set(lm, l, v), gm, buffs)))
                elif kind == "A":
                    fn = tr[3]
                    try:
                        v = fn(lm)
                    except (ZeroDivisionError, EvalError):
                        if diag:
                            diag.eval_errors += 1
                        continue
                    if v != 0:
                        ranked.append((_ASSUME, label, Step(tid, label),
                                       State(_set(cs, ti, q2), lm, gm, buffs)))
                else:  # fence
                    if not buf:
                        ranked.append((_FENCE, label, Step(tid, label),
                                       State(_set(cs, ti, q2), lm, gm, buffs)))
            ranked.sort(key=lambda r: (r[0], r[1]))
            out.extend((ev, st) for (_rk, _lb, ev, st) in ranked)
            if buf:
                (x, v) = buf[0]
                gm2 = gm[:x] + (v,) + gm[x + 1:]
                nb = buffs[:ti] + (buf[1:],) + buffs[ti + 1:]
                out.append((Flush(tid, self.shared_names[x], v),
                            State(cs, lm, gm2, nb)))
        return out

    def project(self, s: State) -> Projected:
        last = []
        for buf in s.buffs:
            if not buf:
                last.append(())
                continue
            m: dict[int, int] = {}
            for (x, v) in buf:
                m[x] = v  # later entries overwrite: rightmost wins
            last.append(tuple(sorted(m.items())))
        return Projected(s.cs, s.gm, s.lm, tuple(last))

    # -- safety -------------------------------------------------------------

    def violates(self, s: State, terminal: bool | None = None) -> bool:
        """Does s violate the program's safety spec?

        terminal is the precomputed "s has no successors" flag; pass None
        when unknown (treated as non-terminal, which suits specs checked on
        every state).
        """
        if self._spec_checker is None:
            return False
        return self._spec_checker(s, bool(terminal))

    def render_state(self, s: State) -> str:
        parts = []
        for ti, tid in enumerate(self.tids):
            parts.append(f"{tid}@{s.cs[ti]}")
        for i, n in enumerate(self.shared_names):
            parts.append(f"{n}={s.gm[i]}")
        for i, n in enumerate(self.local_names):
            parts.append(f"{n}={s.lm[i]}")
        for ti, tid in enumerate(self.tids):
            if s.buffs[ti]:
                pend = ",".join(f"{self.shared_names[x]}:={v}" for (x, v) in s.buffs[ti])
                parts.append(f"buf({tid})=[{pend}]")
        return " ".join(parts)


def _set(t: tuple, i: int, v) -> tuple:
    return t[:i] + (v,) + t[i + 1:]


def _compile_spec(m: Machine):
    from .model import ErrorStates, StateAssert

    spec = m.program.spec
    if isinstance(spec, ErrorStates):
        tid_pos = {t: i for i, t in enumerate(m.tids)}
        compiled = [tuple((tid_pos[t], q) for (t, q) in tup) for tup in spec.tuples]

        def check_error(s: State, _terminal: bool) -> bool:
            cs = s.cs
            for tup in compiled:
                if all(cs[i] == q for (i, q) in tup):
                    return True
            return False

        return check_error

    if isinstance(spec, StateAssert):
        # the assert may mention shared and local variables; build one flat
        # environment index over (gm ++ lm)
        index = {}
        for n, i in m.shared_index.items():
            index[n] = i
        off = len(m.shared_names)
        for n, i in m.local_index.items():
            index[n] = off + i
        fn = compile_expr(spec.expr, index)
        terminal_only = spec.terminal_only

        def check_assert(s: State, terminal: bool) -> bool:
            if terminal_only and not terminal:
                return False
            try:
                return fn(s.gm + s.lm) == 0
            except ZeroDivisionError:
                return False

        return check_assert

    raise TypeError(f"unknown spec {spec!r}")


# ---------------------------------------------------------------------------
# Module-level conveniences mirroring the operation signatures
# ---------------------------------------------------------------------------

def initial_state(program: Program, k: int) -> State:
    return Machine(program).initial_state(k)


def successors(s: State, program: Program, k: int):
    return Machine(program).successors(s, k)


def project(s: State) -> Projected:
    """Projection of a state; canonical and usable as a hash key."""
    last = []
    for buf in s.buffs:
        if not buf:
            last.append(())
            continue
        m: dict[int, int] = {}
        for (x, v) in buf:
            m[x] = v
        last.append(tuple(sorted(m.items())))
    return Projected(s.cs, s.gm, s.lm, tuple(last))
