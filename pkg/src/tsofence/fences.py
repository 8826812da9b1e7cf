"""Counterexample-guided fence synthesis.

From a buffered-execution counterexample we build the competing relation
(cross-process same-location event pairs, at least one write, ordered by
when each access touched global memory) and the per-process program order.
A critical cycle is a simple cycle in their union that disappears once the
write-to-read program-order edges are removed: such a cycle certifies that
the execution relies on delaying writes past later reads, so a fence
between some write-read pair on the cycle kills it.

Fences go immediately after a delaying write, and one fence orders every
earlier write of its process against every later read (the buffer drains
in order), so the synthesis loop picks a minimum set of fence positions
such that every cycle has a delayed edge with a chosen position between
its endpoints (choose_fence_positions).  The plain minimum hitting set
over the delay edges themselves is also provided (choose_delay_set).
After inserting the fences, verification restarts at the bound that
exposed the counterexample.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .explore import (
    BoundExhausted,
    ReachResult,
    SafeAtFixedPoint,
    Trace,
    UnsafeSC,
    UnsafeTSO,
    Verdict,
    fixed_point_search,
)
from .model import Fence, Program, ProcessAutomaton, SharedRead, SharedWrite
from .semantics import Flush, Machine, Step


@dataclass(frozen=True)
class MemoryEvent:
    idx: int        # global-visibility position in the trace (orients Cmpt)
    step: int       # position of the issuing step (orients program order)
    tid: str
    label: str
    occ: int        # occurrence count of this label within the trace
    kind: str       # 'R' | 'W'
    var: str

    def render(self) -> str:
        return f"{self.kind}({self.var})@{self.tid}:{self.label}#{self.occ}"


@dataclass
class Relations:
    events: list[MemoryEvent]
    cmpt: set[tuple[int, int]]
    po: set[tuple[int, int]]
    ppo: set[tuple[int, int]]


class UnfixableCycle(Exception):
    """A cycle without any write-to-read program-order edge cannot be
    broken by fencing."""


def build_relations(trace: Trace, program: Program) -> Relations:
    """Memory events of a trace and their competing/program orders.

    A write's visibility index is the position of its flush (matched FIFO
    per process); writes never flushed within the trace order after the
    trace end, in enqueue order.  Under the k=0 write-through semantics a
    write is visible at its own step.
    """
    events: list[MemoryEvent] = []
    occ_count: dict[str, int] = {}
    pending: dict[str, list[int]] = {tid: [] for tid in program.processes}
    fence_steps: dict[str, list[int]] = {tid: [] for tid in program.processes}
    vis: dict[int, int] = {}  # event list index -> visibility position
    n = len(trace.events)

    for pos, ev in enumerate(trace.events):
        if isinstance(ev, Step):
            ins = program.ins[ev.label]
            occ = occ_count.get(ev.label, 0) + 1
            occ_count[ev.label] = occ
            if isinstance(ins, SharedWrite):
                i = len(events)
                events.append(MemoryEvent(-1, pos, ev.tid, ev.label, occ, "W", ins.var))
                if trace.k == 0:
                    vis[i] = pos
                else:
                    pending[ev.tid].append(i)
            elif isinstance(ins, SharedRead):
                i = len(events)
                events.append(MemoryEvent(pos, pos, ev.tid, ev.label, occ, "R", ins.var))
                vis[i] = pos
            elif isinstance(ins, Fence):
                fence_steps[ev.tid].append(pos)
        elif isinstance(ev, Flush):
            i = pending[ev.tid].pop(0)
            vis[i] = pos

    for tid, rest in pending.items():
        for i in rest:
            vis[i] = n + events[i].step  # after everything, in enqueue order

    events = [
        MemoryEvent(vis[i], e.step, e.tid, e.label, e.occ, e.kind, e.var)
        for i, e in enumerate(events)
    ]

    cmpt = set()
    for i, a in enumerate(events):
        for j, b in enumerate(events):
            if (
                a.tid != b.tid
                and a.var == b.var
                and (a.kind == "W" or b.kind == "W")
                and a.idx < b.idx
            ):
                cmpt.add((i, j))

    po = set()
    for i, a in enumerate(events):
        for j, b in enumerate(events):
            if a.tid == b.tid and a.step < b.step:
                po.add((i, j))

    # Preserved order keeps everything except unfenced write-to-read pairs:
    # a fence already drains the buffer between them, so such a pair cannot
    # be (and need not be) delayed again.
    def fenced_between(a: MemoryEvent, b: MemoryEvent) -> bool:
        return any(a.step < f < b.step for f in fence_steps[a.tid])

    ppo = {
        (i, j)
        for (i, j) in po
        if not (events[i].kind == "W" and events[j].kind == "R")
        or fenced_between(events[i], events[j])
    }

    return Relations(events, cmpt, po, ppo)


def find_critical_cycles(rel: Relations, max_len: int | None = None) -> list[tuple[int, ...]]:
    """All minimal cycles witnessing a delayed write.

    A cycle qualifies when (i) it stops being a cycle once its write-read
    program-order edges are removed (equivalently: it uses at least one),
    (ii) each process contributes at most two accesses, on different
    locations, and (iii) each variable is touched at most three times, by
    distinct processes.  Cycles are returned rotated to start at their
    smallest event and sorted lexicographically.
    """
    events = rel.events
    ntids = len({e.tid for e in events}) or 1
    cap = max_len if max_len is not None else max(4, 2 * ntids)

    edges = {}
    for (i, j) in rel.cmpt | rel.po:
        edges.setdefault(i, set()).add(j)
    adj = {i: sorted(js) for i, js in edges.items()}

    cycles: set[tuple[int, ...]] = set()

    def conditions_ok(path: list[int]) -> bool:
        per_tid: dict[str, list[int]] = {}
        per_var: dict[str, list[int]] = {}
        for i in path:
            per_tid.setdefault(events[i].tid, []).append(i)
            per_var.setdefault(events[i].var, []).append(i)
        for tid, evs in per_tid.items():
            if len(evs) > 2:
                return False
            if len(evs) == 2 and events[evs[0]].var == events[evs[1]].var:
                return False
        for var, evs in per_var.items():
            if len(evs) > 3:
                return False
            if len({events[i].tid for i in evs}) != len(evs):
                return False
        return True

    def uses_delayed_edge(path: list[int]) -> bool:
        ring = path + [path[0]]
        return any(
            (ring[i], ring[i + 1]) in rel.po and (ring[i], ring[i + 1]) not in rel.ppo
            for i in range(len(path))
        )

    def dfs(start: int, node: int, path: list[int]):
        for nxt in adj.get(node, ()):
            if nxt == start:
                if len(path) >= 2 and conditions_ok(path) and uses_delayed_edge(path):
                    cycles.add(tuple(path))
            elif nxt > start and nxt not in path and len(path) < cap:
                path.append(nxt)
                if conditions_ok(path):
                    dfs(start, nxt, path)
                path.pop()

    for start in range(len(events)):
        dfs(start, start, [start])

    out = sorted(cycles)
    for cyc in out:
        assert _preserved_part_acyclic(cyc, rel), "cycle survives without its delayed edges"
    return out


def _preserved_part_acyclic(cycle: tuple[int, ...], rel: Relations) -> bool:
    # literal form of condition (i): the cycle's edges restricted to
    # competing and preserved program order form no cycle
    ring = list(cycle) + [cycle[0]]
    adj: dict[int, list[int]] = {}
    for i in range(len(cycle)):
        a, b = ring[i], ring[i + 1]
        if (a, b) in rel.cmpt or (a, b) in rel.ppo:
            adj.setdefault(a, []).append(b)

    color: dict[int, int] = {}  # 1 = on stack, 2 = done

    def has_cycle(v) -> bool:
        color[v] = 1
        for w in adj.get(v, ()):
            c = color.get(w)
            if c == 1 or (c is None and has_cycle(w)):
                return True
        color[v] = 2
        return False

    return not any(color.get(v) is None and has_cycle(v) for v in cycle)


def cycle_delay_edges(cycle: tuple[int, ...], rel: Relations) -> list[tuple[int, int]]:
    """The relaxed (unfenced write-to-read) program-order edges of a cycle."""
    ring = list(cycle) + [cycle[0]]
    out = []
    for i in range(len(cycle)):
        a, b = ring[i], ring[i + 1]
        if (a, b) in rel.po and (a, b) not in rel.ppo:
            out.append((a, b))
    return out


EXACT_SEARCH_LIMIT = 20


def choose_delay_set(cycles: list[tuple[int, ...]], rel: Relations) -> list[tuple[int, int]]:
    """A minimum set of write-read pairs hitting every cycle.

    Exact search while the candidate universe is small, greedy max-coverage
    beyond that.  Ties prefer fewer distinct fence positions, then the
    lexicographically least selection, so synthesis is deterministic.
    """
    per_cycle: list[frozenset[tuple[int, int]]] = []
    for cyc in cycles:
        cand = cycle_delay_edges(cyc, rel)
        if not cand:
            raise UnfixableCycle(f"cycle {cyc} has no write-read program-order edge")
        per_cycle.append(frozenset(cand))

    universe = sorted({e for s in per_cycle for e in s})

    def position(edge):
        w = rel.events[edge[0]]
        return (w.tid, w.label)

    def sort_key(selection):
        positions = sorted({position(e) for e in selection})
        return (len(positions), positions, sorted(selection))

    if len(universe) <= EXACT_SEARCH_LIMIT:
        for size in range(1, len(universe) + 1):
            if size > 6:
                break
            best = None
            for combo in itertools.combinations(universe, size):
                chosen = set(combo)
                if all(s & chosen for s in per_cycle):
                    key = sort_key(combo)
                    if best is None or key < best[0]:
                        best = (key, list(combo))
            if best is not None:
                return best[1]

    # greedy fallback: repeatedly take the edge covering the most uncovered
    # cycles, preferring already-used positions
    chosen: list[tuple[int, int]] = []
    uncovered = list(per_cycle)
    used_positions: set = set()
    while uncovered:
        def score(e):
            cover = sum(1 for s in uncovered if e in s)
            return (-cover, 0 if position(e) in used_positions else 1, e)
        e = min(universe, key=score)
        chosen.append(e)
        used_positions.add(position(e))
        uncovered = [s for s in uncovered if e not in s]
    return sorted(chosen)


def delay_positions(dlay: list[tuple[int, int]], rel: Relations) -> list[tuple[str, str]]:
    """Project delay edges onto (process, write label) fence positions."""
    return sorted({(rel.events[w].tid, rel.events[w].label) for (w, _r) in dlay})


def choose_fence_positions(
    cycles: list[tuple[int, ...]], rel: Relations
) -> tuple[list[tuple[str, str]], list[tuple[int, int]]]:
    """A minimum set of fence positions breaking every cycle.

    A fence after write w' orders every earlier write of its process
    against every later read (the whole buffer drains), so a position
    covers a delay edge (w, r) whenever w' lies between w and r on the
    trace.  Minimizing positions rather than edges is what keeps one fence
    from being charged several times; the synthesized counts are what the
    position set measures.  Returns the positions and the delay edges they
    enforce.
    """
    per_cycle_edges = []
    for cyc in cycles:
        cand = cycle_delay_edges(cyc, rel)
        if not cand:
            raise UnfixableCycle(f"cycle {cyc} has no write-read program-order edge")
        per_cycle_edges.append(cand)

    writes = [(i, e) for i, e in enumerate(rel.events) if e.kind == "W"]

    def covering_positions(edge):
        w, r = edge
        ew, er = rel.events[w], rel.events[r]
        return {
            (e.tid, e.label)
            for (_i, e) in writes
            if e.tid == ew.tid and ew.step <= e.step < er.step
        }

    cover_by_cycle = []
    edge_positions: dict[tuple[int, int], set] = {}
    for cand in per_cycle_edges:
        cover = set()
        for edge in cand:
            ps = covering_positions(edge)
            edge_positions[edge] = ps
            cover |= ps
        if not cover:
            raise UnfixableCycle("no write position available for a cycle")
        cover_by_cycle.append(cover)

    universe = sorted({p for c in cover_by_cycle for p in c})

    best: list | None = None
    if len(universe) <= EXACT_SEARCH_LIMIT:
        for size in range(1, min(len(universe), 6) + 1):
            found = None
            for combo in itertools.combinations(universe, size):
                chosen = set(combo)
                if all(c & chosen for c in cover_by_cycle):
                    if found is None or sorted(combo) < found:
                        found = sorted(combo)
            if found is not None:
                best = found
                break
    if best is None:
        # greedy max-coverage
        best = []
        uncovered = list(cover_by_cycle)
        while uncovered:
            p = min(universe, key=lambda p: (-sum(1 for c in uncovered if p in c), p))
            best.append(p)
            uncovered = [c for c in uncovered if p not in c]
        best.sort()

    chosen = set(best)
    enforced = sorted({
        edge for edge, ps in edge_positions.items() if ps & chosen
    })
    return best, enforced


def insert_fences(program: Program, positions) -> Program:
    """Insert a fence transition immediately after each named write.

    Splitting the write's target state guarantees every path realizing a
    delayed pair crosses the fence.  Re-inserting an existing fence leaves
    the program structurally unchanged.
    """
    procs = dict(program.processes)
    ins = dict(program.ins)
    label_tid = dict(program.label_tid)
    label_entry = dict(program.label_entry)

    for (tid, wlabel) in sorted(set(positions)):
        proc = procs[tid]
        hit = [t for t in proc.edges if t[1] == wlabel]
        if not hit:
            raise ValueError(f"no transition labeled {wlabel!r} in process {tid}")
        (q, a, q2) = hit[0]
        after = [t for t in proc.edges if t[0] == q2]
        if len(after) == 1 and isinstance(ins[after[0][1]], Fence):
            continue  # already fenced right here
        q_new = max(proc.states) + 1
        flabel = f"{wlabel}.fence"
        edges = []
        for (fq, fl, ft) in proc.edges:
            if (fq, fl, ft) == (q, a, q2):
                edges.append((q, a, q_new))
            else:
                edges.append((fq, fl, ft))
        edges.append((q_new, flabel, q2))
        procs[tid] = ProcessAutomaton(
            tid, proc.states | {q_new}, proc.q0, tuple(edges)
        )
        ins[flabel] = Fence()
        label_tid[flabel] = tid
        label_entry[flabel] = q_new

    return Program(
        processes=procs,
        shared=dict(program.shared),
        locals_=dict(program.locals_),
        ins=ins,
        label_tid=label_tid,
        spec=program.spec,
        source=None,
        label_entry=label_entry,
    )


# ---------------------------------------------------------------------------
# The verify -> fence loop
# ---------------------------------------------------------------------------

@dataclass
class FenceRound:
    k: int
    trace_events: int
    cycles: list[list[str]]            # rendered events per cycle
    positions: list[tuple[str, str]]   # fences inserted this round


@dataclass
class SynthesisResult:
    verdict: Verdict
    program: Program                   # final (possibly fenced) program
    fences: list[tuple[str, str]]      # all (process, after_label) inserted
    rounds: list[FenceRound]
    stats: list[ReachResult]
    unfixable: bool = False
    note: str | None = None


MAX_ROUNDS = 64


def synthesize(program: Program, k_max: int = 16, budget: int = 10_000_000) -> SynthesisResult:
    """Alternate bounded verification and fence insertion to convergence.

    Counterexamples at bound zero are real interleaving bugs and stop the
    loop; buffered-only counterexamples contribute fences, and the search
    resumes at the same bound.  Counterexamples without critical cycles
    cannot be repaired by fencing and also stop the loop.
    """
    current = program
    fences: list[tuple[str, str]] = []
    rounds: list[FenceRound] = []
    stats: list[ReachResult] = []
    start_k = 0

    for _ in range(MAX_ROUNDS):
        verdict, st = fixed_point_search(Machine(current), k_max=k_max,
                                         start_k=start_k, budget=budget)
        stats.extend(st)
        if isinstance(verdict, (SafeAtFixedPoint, UnsafeSC, BoundExhausted)):
            return SynthesisResult(verdict, current, fences, rounds, stats)

        assert isinstance(verdict, UnsafeTSO)
        rel = build_relations(verdict.trace, current)
        cycles = find_critical_cycles(rel)
        if not cycles:
            return SynthesisResult(
                verdict, current, fences, rounds, stats, unfixable=True,
                note="counterexample contains no critical cycle; "
                     "it is explainable without write delays, fences cannot remove it",
            )
        try:
            positions, _dlay = choose_fence_positions(cycles, rel)
        except UnfixableCycle as e:
            return SynthesisResult(verdict, current, fences, rounds, stats,
                                   unfixable=True, note=str(e))
        rounds.append(FenceRound(
            k=verdict.k,
            trace_events=len(verdict.trace.events),
            cycles=[[rel.events[i].render() for i in cyc] for cyc in cycles],
            positions=positions,
        ))
        current = insert_fences(current, positions)
        for pos in positions:
            if pos not in fences:
                fences.append(pos)
        start_k = verdict.k

    return SynthesisResult(
        UnsafeTSO(start_k, verdict.trace), current, fences, rounds, stats,
        unfixable=True, note=f"no convergence after {MAX_ROUNDS} fence rounds",
    )


def render_fence_report(result: SynthesisResult) -> str:
    """One line per fence, with the cycles that forced it."""
    lines = []
    for (tid, label) in result.fences:
        lines.append(f"fence: {tid} after {label}")
    for rnd in result.rounds:
        lines.append(f"round at k={rnd.k}: {len(rnd.cycles)} critical cycle(s), "
                     f"fences at {', '.join(f'{t} after {l}' for t, l in rnd.positions)}")
        for cyc in rnd.cycles:
            lines.append("  cycle: " + " -> ".join(cyc))
    if result.unfixable and result.note:
        lines.append(f"unfixable: {result.note}")
    return "\n".join(lines)
