import pytest

from tsofence.explore import reach_k
from tsofence.parser import parse_program
from tsofence.semantics import Machine
from tsofence.symbolic import (
    UNDEF,
    LabelRegistry,
    SymMachine,
    export_trace_automaton,
    sc_interpret,
    symbolic_reach,
)


def test_sci_last_assignment_wins():
    p = parse_program("""
shared x in {0..5} = 0;
shared y in {0..5} = 0;
process P {
  local l in {0..5} = 0;
  a: l := 3;
  b: x := l + 2;
  c: y := 2;
}
""")
    reg = LabelRegistry(p)
    gm, lm = sc_interpret(["a", "b", "c"], p, reg)
    assert gm["x"] == 5
    assert lm["l"] == 3
    assert gm["y"] == 2


def test_sci_unassigned_returns_initial():
    p = parse_program("""
shared x in {0,1} = 1;
process P { local l in {0,1} = 0; a: l := x; }
""")
    reg = LabelRegistry(p)
    gm, lm = sc_interpret([], p, reg)
    assert gm["x"] == 1 and lm["l"] == 0


def test_sci_assume_false_is_undef():
    p = parse_program("""
shared x in {0,1} = 0;
process P { local l in {0,1} = 0; a: assume(l = 1); b: x := 1; }
""")
    reg = LabelRegistry(p)
    assert sc_interpret(["a", "b"], p, reg) is UNDEF


def test_sci_unregistered_label_raises(sb_program):
    reg = LabelRegistry(sb_program)
    with pytest.raises(KeyError):
        sc_interpret(["nonexistent"], sb_program, reg)


def test_registry_memoization(exchange_program):
    reg = LabelRegistry(exchange_program)
    s1 = reg.snapshot("l", 1)
    s2 = reg.snapshot("l", 1)
    assert s1 == s2
    w1 = reg.rewritten_write("b", {"l": 1})
    w2 = reg.rewritten_write("b", {"l": 1})
    assert w1 == w2
    r1 = reg.inlined_read("c", w1)
    r2 = reg.inlined_read("c", w1)
    assert r1 == r2
    size = reg.size()
    reg.snapshot("l", 1)
    reg.rewritten_write("b", {"l": 1})
    reg.inlined_read("c", w1)
    assert reg.size() == size


def test_write_of_constant_needs_no_snapshot(sb_program):
    sm = SymMachine(sb_program)
    s0 = sm.initial_state()
    succs = sm.successors(s0, k=1)
    # both enabled transitions are constant writes: empty emission, buffer
    # receives the original label
    by_emit = {em: st for (em, st) in succs}
    assert () in by_emit or all(len(em) <= 1 for em in by_emit)
    for (em, st) in succs:
        if st.sbuff[0]:
            assert em == ()
            assert st.sbuff[0][0] == ("x", "a")


def test_li_wraps_modulo_k_plus_one():
    p = parse_program("""
shared x in {0,1,2} = 0;
process P {
  local l in {0,1,2} = 0;
  while (true) {
    a: x := l;
  }
}
""")
    sm = SymMachine(p)
    k = 1
    s = sm.initial_state()
    seen_indices = []
    for _ in range(5):
        succs = [t for t in sm.successors(s, k)]
        # take the write if enabled, else flush
        (em, s2) = succs[0]
        li = s2.li[sm.local_pos["l"]]
        seen_indices.append(li)
        s = s2
    # k=1: indices alternate within {1,2} and never leave 1..k+1
    assert set(seen_indices) <= {1, 2}


def test_li_at_bound_wraps_to_one():
    p = parse_program("""
shared x in {0,1,2} = 0;
process P {
  local l in {0,1,2} = 0;
  a: x := l;
}
""")
    k = 2
    sm = SymMachine(p)
    s0 = sm.initial_state()
    # force the counter to its ceiling k+1, then issue the write
    forced = s0._replace(li=(k + 1,))
    (em, s1) = sm.successors(forced, k)[0]
    assert s1.li[sm.local_pos["l"]] == (k + 1) % (k + 1) + 1 == 1
    assert em == (sm.registry.snapshot("l", k + 1),)


def test_fence_resets_instance_counters():
    p = parse_program("""
shared x in {0,1,2} = 0;
process P {
  local l in {0,1,2} = 0;
  a: x := l;
  f: fence;
  b: x := l;
}
""")
    sm = SymMachine(p)
    k = 2
    s = sm.initial_state()
    (em, s) = [t for t in sm.successors(s, k) if t[1].sbuff[0]][0]   # the write
    assert s.li[sm.local_pos["l"]] == 2
    # flush so the fence becomes enabled
    (em, s) = [t for t in sm.successors(s, k) if not t[1].sbuff[0]][0]
    succs = sm.successors(s, k)
    (em, s) = succs[0]  # the fence
    assert em == ()
    assert s.li[sm.local_pos["l"]] == 1


EXCHANGE_STATE = {"l": 0, "m": 0, "x": 5, "y": 3}


def test_exchange_trace_reaches_stale_state(exchange_program):
    # Build the trace by hand: both writes stay buffered past both reads,
    # then flush.  The snapshots keep the overwritten locals flowing into
    # the delayed writes.
    p = exchange_program
    reg = LabelRegistry(p)
    snap_l = reg.snapshot("l", 1)
    snap_m = reg.snapshot("m", 1)
    w_y = reg.rewritten_write("b", {"l": 1})
    w_x = reg.rewritten_write("e", {"m": 1})
    trace = ["a", snap_l, "c", "d", snap_m, "f", w_y, w_x]
    gm, lm = sc_interpret(trace, p, reg)
    assert {**gm, **lm} == EXCHANGE_STATE


def test_exchange_trace_as_printed_differs(exchange_program):
    # Flushing the first process's write before the second process reads
    # gives m=3, not the stale m=0: the flush must come after both reads.
    p = exchange_program
    reg = LabelRegistry(p)
    snap_l = reg.snapshot("l", 1)
    snap_m = reg.snapshot("m", 1)
    w_y = reg.rewritten_write("b", {"l": 1})
    w_x = reg.rewritten_write("e", {"m": 1})
    trace = ["a", snap_l, "c", w_y, "d", snap_m, "f", w_x]
    gm, lm = sc_interpret(trace, p, reg)
    assert lm["m"] == 3
    assert {**gm, **lm} == {"l": 0, "m": 3, "x": 5, "y": 3}


def test_exchange_emission_can_form_the_stale_trace(exchange_program):
    # The symbolic transition system can emit exactly the hand-built trace.
    sm = SymMachine(exchange_program)
    reg = sm.registry
    k = 1
    want = ["a", reg.snapshot("l", 1), "c", "d", reg.snapshot("m", 1), "f",
            reg.rewritten_write("b", {"l": 1}), reg.rewritten_write("e", {"m": 1})]
    s = sm.initial_state()
    emitted: list[str] = []
    # follow the unique successor matching the next wanted prefix
    while emitted != want:
        for (em, s2) in sm.successors(s, k):
            cand = emitted + list(em)
            if cand == want[: len(cand)]:
                emitted = cand
                s = s2
                break
        else:
            pytest.fail(f"no successor extends {emitted}")
    assert emitted == want


def test_symbolic_reach_includes_exchange_state(exchange_program):
    res = symbolic_reach(exchange_program, k=1)
    assert res.complete
    shared_names = tuple(exchange_program.shared)
    local_names = tuple(exchange_program.locals_)
    want_gm = tuple(EXCHANGE_STATE[n] for n in shared_names)
    want_lm = tuple(EXCHANGE_STATE[n] for n in local_names)
    assert (want_gm, want_lm) in res.outcomes


def test_sb_symbolic_reach_includes_stale_outcome(sb_program):
    res = symbolic_reach(sb_program, k=1)
    shared_names = tuple(sb_program.shared)
    local_names = tuple(sb_program.locals_)
    want = (
        tuple({"x": 1, "y": 1}[n] for n in shared_names),
        tuple({"l1": 0, "l2": 0}[n] for n in local_names),
    )
    assert want in res.outcomes
    # note: the same memory values also appear at k=0 as an intermediate
    # configuration (both writes done, reads pending); what distinguishes
    # the buffered execution is reaching them in a terminal state, which
    # the operational layer asserts via the litmus spec verdicts


def _operational_outcomes(program, k):
    m = Machine(program)
    res = reach_k(m, k, check_spec=False)
    return {(pr.gm, pr.lm) for pr in res.projected}


def test_equivalence_with_operational_semantics(small_suite, exchange_program):
    programs = dict(small_suite)
    programs["exchange"] = exchange_program
    for name, p in programs.items():
        for k in (0, 1, 2):
            ours = symbolic_reach(p, k)
            assert ours.complete, f"{name} k={k}: symbolic budget exhausted"
            theirs = _operational_outcomes(p, k)
            assert ours.outcomes == theirs, (
                f"{name} k={k}: symbolic and operational memory sets differ"
            )


def test_trace_automaton_export(sb_program):
    text = export_trace_automaton(sb_program, k=1)
    lines = text.strip().splitlines()
    ins_lines = [l for l in lines if l.startswith("ins ")]
    trans = [l for l in lines if not l.startswith("ins ")]
    assert trans, "expected transitions"
    labels_used = set()
    for t in trans:
        src, body, dst = t.split(" ")
        int(src), int(dst)
        if body != "-":
            labels_used.update(body.split(","))
    declared = {l.split(" ", 2)[1] for l in ins_lines}
    assert labels_used <= declared
    # the buffered write of P1 appears both as an emission (flush) and in
    # the instruction table
    assert any(" a " in l or l.endswith(" a") or l.startswith("ins a ") for l in ins_lines)


def test_wraparound_invariant_holds_on_suite(small_suite):
    # symbolic_reach asserts the invariant internally on every state;
    # reaching here without WraparoundViolation is the check
    for p in small_suite.values():
        for k in (0, 1, 2):
            res = symbolic_reach(p, k)
            assert res.wraparound_checked == res.states


def test_registry_size_bound(small_suite, exchange_program):
    # label synthesis count stays within |LABL| * (k+2)^(max locals per write)
    from tsofence.model import SharedWrite, free_vars
    programs = list(small_suite.values()) + [exchange_program]
    for p in programs:
        max_locals = max(
            (len(free_vars(i.expr)) for i in p.ins.values()
             if isinstance(i, SharedWrite)),
            default=0,
        )
        for k in (0, 1, 2):
            res = symbolic_reach(p, k)
            # synthesized labels: snapshots, rewritten writes, inlined reads
            bound = len(p.ins) * (k + 2) ** max(max_locals, 1) * 3
            assert res.registry_size <= len(p.ins) + bound


def test_random_programs_symbolic_matches_operational():
    from hypothesis import given, settings
    from conftest import tiny_program_strategy

    @settings(max_examples=25, deadline=None)
    @given(tiny_program_strategy())
    def check(text):
        p = parse_program(text)
        for k in (0, 1):
            sym = symbolic_reach(p, k)
            assert sym.complete
            ops = {(pr.gm, pr.lm)
                   for pr in reach_k(Machine(p), k, check_spec=False).projected}
            assert sym.outcomes == ops

    check()
