import pytest

from tsofence.explore import (
    ReplayError,
    SafeAtFixedPoint,
    UnsafeSC,
    reach_k,
    replay,
)
from tsofence.fences import (
    build_relations,
    choose_delay_set,
    cycle_delay_edges,
    delay_positions,
    find_critical_cycles,
    insert_fences,
    render_fence_report,
    synthesize,
)
from tsofence.model import Fence, canonical_form
from tsofence.parser import parse_program, parse_spec_clause
from tsofence.semantics import Machine


def _sb_counterexample(sb_program):
    m = Machine(sb_program)
    res = reach_k(m, 1)
    assert not res.safe
    return m, res.trace


def test_sb_relations(sb_program):
    _m, trace = _sb_counterexample(sb_program)
    rel = build_relations(trace, sb_program)
    label = {i: e.label for i, e in enumerate(rel.events)}
    by_label = {e.label: i for i, e in enumerate(rel.events)}
    assert sorted(label.values()) == ["a", "b", "c", "d"]
    a, b, c, d = by_label["a"], by_label["b"], by_label["c"], by_label["d"]
    # program order within processes
    assert (a, b) in rel.po and (c, d) in rel.po
    # both pairs are write->read, so preserved order drops them
    assert (a, b) not in rel.ppo and (c, d) not in rel.ppo
    # each read competes with the other process's write and precedes its
    # global visibility
    assert (b, c) in rel.cmpt
    assert (d, a) in rel.cmpt


def test_single_process_trace_has_no_cmpt():
    p = parse_program("""
shared x in {0,1} = 0;
process P {
  local l in {0,1} = 0;
  a: x := 1;
  b: l := x;
}
""")
    p.spec = parse_spec_clause("assert(!(l = 1))", p)
    m = Machine(p)
    res = reach_k(m, 1)
    rel = build_relations(res.trace, p)
    assert rel.cmpt == set()


def test_two_reads_do_not_compete():
    p = parse_program("""
shared x in {0,1} = 0;
process P { local l in {0,1} = 0; a: l := x; }
process Q { local m in {0,1} = 0; b: m := x; }
""")
    p.spec = parse_spec_clause("assert(!(l = 0 & m = 0))", p)
    res = reach_k(Machine(p), 1)
    rel = build_relations(res.trace, p)
    assert rel.cmpt == set()


def test_sb_critical_cycle(sb_program):
    _m, trace = _sb_counterexample(sb_program)
    rel = build_relations(trace, sb_program)
    cycles = find_critical_cycles(rel)
    assert len(cycles) == 1
    cyc = cycles[0]
    labels = [rel.events[i].label for i in cyc]
    # the four-event alternating cycle through both write->read pairs
    assert sorted(labels) == ["a", "b", "c", "d"]
    edges = cycle_delay_edges(cyc, rel)
    edge_labels = sorted((rel.events[w].label, rel.events[r].label) for (w, r) in edges)
    assert edge_labels == [("a", "b"), ("c", "d")]


def test_sc_feasible_trace_has_no_critical_cycle(sb_program):
    # an interleaving where the flush lands between the write and the read
    # is explainable sequentially
    from tsofence.semantics import Flush, Step
    m = Machine(sb_program)
    events = [
        Step("P1", "a"), Flush("P1", "x", 1), Step("P1", "b"),
        Step("P2", "c"), Flush("P2", "y", 1), Step("P2", "d"),
    ]
    final = replay(m, 1, events)
    from tsofence.explore import Trace
    rel = build_relations(Trace(1, events, final), sb_program)
    assert find_critical_cycles(rel) == []


def test_choose_delay_single_cycle_single_edge():
    # one cycle, one candidate: that candidate is chosen
    from tsofence.fences import Relations, MemoryEvent
    events = [
        MemoryEvent(10, 0, "P", "w", 1, "W", "x"),
        MemoryEvent(1, 1, "P", "r", 1, "R", "y"),
    ]
    rel = Relations(events, set(), {(0, 1)}, set())
    dlay = choose_delay_set([(0, 1)], rel)
    assert dlay == [(0, 1)]


def test_choose_delay_set_minimum_cardinality(sb_program):
    _m, trace = _sb_counterexample(sb_program)
    rel = build_relations(trace, sb_program)
    cycles = find_critical_cycles(rel)
    dlay = choose_delay_set(cycles, rel)
    assert len(dlay) == 1  # either write->read pair alone breaks the cycle


def test_insert_fence_after_write(sb_program):
    positions = [("P1", "a")]
    q = insert_fences(sb_program, positions)
    fence_labels = [l for l, i in q.ins.items() if isinstance(i, Fence)]
    assert fence_labels == ["a.fence"]
    proc = q.processes["P1"]
    (wq, wl, wt) = [t for t in proc.edges if t[1] == "a"][0]
    after = [t for t in proc.edges if t[0] == wt]
    assert len(after) == 1 and after[0][1] == "a.fence"


def test_insert_fence_idempotent(sb_program):
    q1 = insert_fences(sb_program, [("P1", "a")])
    q2 = insert_fences(q1, [("P1", "a")])
    assert canonical_form(q1) == canonical_form(q2)


def test_insert_empty_positions_is_identity(sb_program):
    q = insert_fences(sb_program, [])
    assert canonical_form(q) == canonical_form(sb_program)


def test_counterexample_fails_to_replay_after_fencing(sb_program):
    m, trace = _sb_counterexample(sb_program)
    rel = build_relations(trace, sb_program)
    dlay = choose_delay_set(find_critical_cycles(rel), rel)
    q = insert_fences(sb_program, delay_positions(dlay, rel))
    with pytest.raises(ReplayError):
        replay(Machine(q), 1, trace.events)


def test_synthesize_sb_two_fences(sb_program):
    result = synthesize(sb_program, k_max=8)
    assert isinstance(result.verdict, SafeAtFixedPoint)
    assert sorted(result.fences) == [("P1", "a"), ("P2", "c")]
    assert not result.unfixable
    report = render_fence_report(result)
    assert "fence: P1 after a" in report
    assert "fence: P2 after c" in report


def test_synthesize_peterson_two_fences(peterson_program):
    result = synthesize(peterson_program, k_max=8)
    assert isinstance(result.verdict, SafeAtFixedPoint)
    assert len(result.fences) == 2
    # one fence per process, after the turn writes (the store each process
    # must drain before validating its spin condition)
    assert sorted(result.fences) == [("P1", "a2"), ("P2", "b2")]


def test_synthesize_mp_needs_no_fence(mp_program):
    result = synthesize(mp_program, k_max=8)
    assert isinstance(result.verdict, SafeAtFixedPoint)
    assert result.fences == []


def test_synthesize_is_deterministic(peterson_program):
    a = synthesize(peterson_program, k_max=8)
    b = synthesize(peterson_program, k_max=8)
    assert a.fences == b.fences
    assert [r.positions for r in a.rounds] == [r.positions for r in b.rounds]
    assert [r.visited for r in a.stats] == [r.visited for r in b.stats]


def test_synthesize_stops_on_sc_bug():
    p = parse_program("""
shared x in {0,1} = 0;
process P { a: x := 1; }
""")
    p.spec = parse_spec_clause("assert(x = 0)", p)
    result = synthesize(p, k_max=4)
    assert isinstance(result.verdict, UnsafeSC)
    assert result.fences == []
