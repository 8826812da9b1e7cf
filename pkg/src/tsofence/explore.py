"""Explicit-state reachability over bounded-buffer semantics.

reach_k runs a breadth-first search with full-state deduplication and stops
at the first spec violation (shortest counterexample under BFS order) or
when the finite space is exhausted.  fixed_point_search raises the buffer
bound one step at a time; once the projected reachable sets of two
consecutive bounds coincide, no larger bound can reach new projected states,
so the program is safe for unbounded buffers.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

from .model import StateAssert
from .semantics import Diagnostics, Event, Machine, Projected, State


@dataclass
class Trace:
    """A replayable event sequence from the initial state."""
    k: int
    events: list[Event]
    final: State


@dataclass
class ReachResult:
    k: int
    safe: bool
    trace: Trace | None           # counterexample when unsafe
    visited: int
    projected: frozenset[Projected] | None
    millis: float
    diagnostics: Diagnostics = field(default_factory=Diagnostics)


class BudgetExceeded(Exception):
    """State budget exhausted; carries the partial statistics."""

    def __init__(self, k: int, visited: int):
        super().__init__(f"state budget exceeded at bound {k} after {visited} states")
        self.k = k
        self.visited = visited


class ReplayError(Exception):
    def __init__(self, index: int, event: Event):
        super().__init__(f"event {index} not enabled: {event.render()}")
        self.index = index
        self.event = event


# -- verdicts ----------------------------------------------------------------

@dataclass
class SafeAtFixedPoint:
    k0: int  # projected sets of k0 and k0+1 coincide


@dataclass
class UnsafeSC:
    trace: Trace


@dataclass
class UnsafeTSO:
    k: int
    trace: Trace


@dataclass
class BoundExhausted:
    k_max: int


Verdict = SafeAtFixedPoint | UnsafeSC | UnsafeTSO | BoundExhausted

DEFAULT_BUDGET = 10_000_000


def reach_k(
    machine: Machine,
    k: int,
    budget: int = DEFAULT_BUDGET,
    check_spec: bool = True,
    collect_projected: bool = True,
) -> ReachResult:
    """Explore all states reachable under buffer bound k.

    With check_spec the search stops at the first violating state and
    returns its trace; otherwise (or when no violation exists) the full
    projected-state set is collected.
    """
    t0 = time.perf_counter()
    diag = Diagnostics()
    check = check_spec and machine.program.spec is not None
    terminal_spec = isinstance(machine.program.spec, StateAssert) and \
        machine.program.spec.terminal_only

    init = machine.initial_state(k)
    parent: dict[State, tuple[State, Event] | None] = {init: None}
    projected: set[Projected] | None = set() if collect_projected else None
    if projected is not None:
        projected.add(machine.project(init))

    if check and not terminal_spec and machine.violates(init):
        return ReachResult(k, False, Trace(k, [], init), 1, None,
                           (time.perf_counter() - t0) * 1000.0, diag)

    queue = deque([init])
    while queue:
        s = queue.popleft()
        succs = machine.successors(s, k, diag)
        if check and terminal_spec and not succs and machine.violates(s, terminal=True):
            return ReachResult(k, False, _trace_to(parent, s, k), len(parent), None,
                               (time.perf_counter() - t0) * 1000.0, diag)
        for (ev, s2) in succs:
            if s2 in parent:
                continue
            parent[s2] = (s, ev)
            if len(parent) > budget:
                raise BudgetExceeded(k, len(parent))
            if projected is not None:
                projected.add(machine.project(s2))
            if check and not terminal_spec and machine.violates(s2):
                return ReachResult(k, False, _trace_to(parent, s2, k), len(parent), None,
                                   (time.perf_counter() - t0) * 1000.0, diag)
            queue.append(s2)

    return ReachResult(
        k, True, None, len(parent),
        frozenset(projected) if projected is not None else None,
        (time.perf_counter() - t0) * 1000.0, diag,
    )


def _trace_to(parent, s: State, k: int) -> Trace:
    events = []
    cur = s
    while True:
        link = parent[cur]
        if link is None:
            break
        prev, ev = link
        events.append(ev)
        cur = prev
    events.reverse()
    return Trace(k, events, s)


def replay(machine: Machine, k: int, events: list[Event]) -> State:
    """Apply an event sequence from the initial state, deterministically.

    Fails with ReplayError at the first event that is not among the enabled
    transitions of the current state.
    """
    s = machine.initial_state(k)
    for i, ev in enumerate(events):
        for (cand, s2) in machine.successors(s, k):
            if cand == ev:
                s = s2
                break
        else:
            raise ReplayError(i, ev)
    return s


def fixed_point_search(
    machine: Machine,
    k_max: int = 16,
    start_k: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> tuple[Verdict, list[ReachResult]]:
    """Raise the buffer bound until a violation or a projected fixed point.

    Starts at start_k (0 for a fresh program; the fence-synthesis loop
    restarts at the bound that exposed the last counterexample).  A
    stabilization between consecutive bounds certifies safety for unbounded
    buffers; k_max bounds the climb defensively.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    stats: list[ReachResult] = []
    prev_projected = None
    k = start_k
    while k <= k_max:
        res = reach_k(machine, k, budget=budget)
        stats.append(res)
        if not res.safe:
            if k == 0:
                return UnsafeSC(res.trace), stats
            return UnsafeTSO(k, res.trace), stats
        if prev_projected is not None and res.projected == prev_projected:
            return SafeAtFixedPoint(k - 1), stats
        prev_projected = res.projected
        k += 1
    return BoundExhausted(k_max), stats
