"""Constant-write expansion.

Rewrites a program so that every shared write stores a literal constant:
a write x := e with a non-constant e becomes a case split over the finite
set of values e can take, each branch guarded by assume(e = v) and writing
the constant v.  Afterwards each write label determines the written value,
which is what lets label-buffering analyses recover concrete memories.

The guard and the write read only the writing process's locals, so no other
process can invalidate the guard between the two steps; reachable memories
are preserved exactly (modulo the fresh intermediate control states).
"""

from __future__ import annotations

import itertools

from .model import (
    Assume,
    BinOp,
    Const,
    EvalError,
    Program,
    ProcessAutomaton,
    SharedWrite,
    eval_expr,
    free_vars,
    is_const,
)


class BranchLimitExceeded(Exception):
    def __init__(self, label: str, branches: int, limit: int):
        super().__init__(
            f"write {label!r} expands to {branches} branches (limit {limit}); "
            f"shrink the involved domains or raise the limit"
        )
        self.label = label
        self.branches = branches
        self.limit = limit


DEFAULT_BRANCH_LIMIT = 64


def constant_write_transform(p: Program, branch_limit: int = DEFAULT_BRANCH_LIMIT) -> Program:
    """Expand non-constant shared writes into guarded constant writes."""
    new_procs: dict[str, ProcessAutomaton] = {}
    ins = dict(p.ins)
    label_tid = dict(p.label_tid)
    label_entry = dict(p.label_entry)

    for tid, proc in p.processes.items():
        edges: list[tuple[int, str, int]] = []
        states = set(proc.states)
        next_state = max(proc.states) + 1 if proc.states else 1

        for (q, a, q2) in proc.edges:
            instr = p.ins[a]
            if not isinstance(instr, SharedWrite) or is_const(instr.expr):
                edges.append((q, a, q2))
                continue

            values = _possible_values(instr.expr, p)
            values &= p.shared[instr.var].domain  # out-of-domain writes stay disabled
            if len(values) > branch_limit:
                raise BranchLimitExceeded(a, len(values), branch_limit)

            del ins[a]
            label_tid.pop(a, None)
            for v in sorted(values):
                mid = next_state
                next_state += 1
                states.add(mid)
                guard = f"{a}.g{v}"
                write = f"{a}.v{v}"
                ins[guard] = Assume(BinOp("=", instr.expr, Const(v)))
                ins[write] = SharedWrite(instr.var, Const(v))
                label_tid[guard] = tid
                label_tid[write] = tid
                label_entry[guard] = q
                label_entry[write] = mid
                edges.append((q, guard, mid))
                edges.append((mid, write, q2))

        new_procs[tid] = ProcessAutomaton(tid, frozenset(states), proc.q0, tuple(edges))

    return Program(
        processes=new_procs,
        shared=dict(p.shared),
        locals_=dict(p.locals_),
        ins=ins,
        label_tid=label_tid,
        spec=p.spec,
        source=None,  # the structured source no longer matches
        label_entry=label_entry,
    )


def _possible_values(e, p: Program) -> frozenset[int]:
    """Values an expression over locals can take, by domain enumeration."""
    fv = sorted(free_vars(e))
    domains = [sorted(p.locals_[v].domain) for v in fv]
    out = set()
    for combo in itertools.product(*domains):
        env = dict(zip(fv, combo))
        try:
            out.add(eval_expr(e, env))
        except EvalError:
            continue  # that valuation would have disabled the write anyway
    return frozenset(out)
