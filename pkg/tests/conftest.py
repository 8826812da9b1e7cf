import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tsofence.parser import parse_program


# Store-buffering litmus: two processes each write one flag and read the
# other's.  Under buffering both reads can return the initial zeros.
SB_TEXT = """
shared x in {0,1} = 0;
shared y in {0,1} = 0;
process P1 {
  local l1 in {0,1} = 0;
  a: x := 1;
  b: l1 := y;
}
process P2 {
  local l2 in {0,1} = 0;
  c: y := 1;
  d: l2 := x;
}
@terminal assert(!(l1 = 0 & l2 = 0));
"""

# Two-process exchange where each write depends on a local that is
# overwritten by a later read: exposes the need for snapshot renaming.
EXCHANGE_TEXT = """
shared x in {0..8} = 0;
shared y in {0..8} = 0;
process P1 {
  local l in {0..8} = 0;
  a: l := 2;
  b: y := l + 1;
  c: l := x;
}
process P2 {
  local m in {0..8} = 0;
  d: m := 3;
  e: x := m + 2;
  f: m := y;
}
"""

# Message passing: data is published before the ready flag; FIFO buffers
# preserve the order, so the stale read is impossible at any bound.
MP_TEXT = """
shared data in {0,1} = 0;
shared ready in {0,1} = 0;
process W {
  a: data := 1;
  b: ready := 1;
}
process R {
  local r1 in {0,1} = 0;
  local r2 in {0,1} = 0;
  c: r1 := ready;
  d: r2 := data;
}
@terminal assert(!(r1 = 1 & r2 = 0));
"""

PETERSON_TEXT = """
shared flag1 in {0,1} = 0;
shared flag2 in {0,1} = 0;
shared turn in {0,1,2} = 0;

process P1 {
  while (true) {
    a1: flag1 := 1;
    a2: turn := 2;
    while (flag2 = 1 & turn = 2) { }
    cs1: flag1 := 0;
  }
}
process P2 {
  while (true) {
    b1: flag2 := 1;
    b2: turn := 1;
    while (flag1 = 1 & turn = 1) { }
    cs2: flag2 := 0;
  }
}
error: (P1@cs1 && P2@cs2);
"""


@pytest.fixture(scope="session")
def sb_program():
    return parse_program(SB_TEXT)


@pytest.fixture(scope="session")
def exchange_program():
    return parse_program(EXCHANGE_TEXT)


@pytest.fixture(scope="session")
def mp_program():
    return parse_program(MP_TEXT)


@pytest.fixture(scope="session")
def peterson_program():
    return parse_program(PETERSON_TEXT)


# Small closed programs for oracle comparisons: at most four labels per
# process, domains within {0,1,2}.
SMALL_SUITE = {
    "sb": SB_TEXT,
    "mp": MP_TEXT,
    "lb": """
shared x in {0,1} = 0;
shared y in {0,1} = 0;
process P1 {
  local r1 in {0,1} = 0;
  a: r1 := x;
  b: y := 1;
}
process P2 {
  local r2 in {0,1} = 0;
  c: r2 := y;
  d: x := 1;
}
""",
    "sb_fenced": """
shared x in {0,1} = 0;
shared y in {0,1} = 0;
process P1 {
  local l1 in {0,1} = 0;
  a: x := 1;
  f1: fence;
  b: l1 := y;
}
process P2 {
  local l2 in {0,1} = 0;
  c: y := 1;
  f2: fence;
  d: l2 := x;
}
""",
    "double_write": """
shared x in {0,1,2} = 0;
process P1 {
  local r in {0,1,2} = 0;
  a: x := 1;
  b: x := 2;
  c: r := x;
}
process P2 {
  local s in {0,1,2} = 0;
  d: s := x;
}
""",
    "assume_branch": """
shared x in {0,1,2} = 0;
process P1 {
  local l in {0,1,2} = 0;
  a: l := x;
  b: assume(l < 2);
  c: x := 2;
}
process P2 {
  d: x := 1;
}
""",
    "local_loop": """
shared x in {0,1,2} = 0;
process P1 {
  local l in {0,1,2} = 0;
  while (l < 2) {
    a: l := l + 1;
    b: x := l;
  }
}
process P2 {
  local r in {0,1,2} = 0;
  c: r := x;
}
""",
}


@pytest.fixture(scope="session")
def small_suite():
    return {name: parse_program(text) for name, text in SMALL_SUITE.items()}


def tiny_program_strategy():
    """Hypothesis strategy producing small well-formed program texts.

    One or two straight-line processes over shared g0/g1 and one local,
    domains within {0..2}: enough to exercise buffering, forwarding and
    assume-blocking without state blowup.
    """
    from hypothesis import strategies as st

    @st.composite
    def build(draw):
        nshared = draw(st.integers(1, 2))
        shared = [f"g{i}" for i in range(nshared)]
        lines = [f"shared {g} in {{0..2}} = {draw(st.integers(0, 2))};" for g in shared]
        for tid in ("P1", "P2")[: draw(st.integers(1, 2))]:
            body = [f"process {tid} {{", f"  local l_{tid} in {{0..2}} = 0;"]
            for i in range(draw(st.integers(1, 3))):
                kind = draw(st.integers(0, 4))
                g = draw(st.sampled_from(shared))
                if kind == 0:
                    body.append(f"  s{tid}{i}: {g} := {draw(st.integers(0, 2))};")
                elif kind == 1:
                    body.append(f"  s{tid}{i}: {g} := l_{tid};")
                elif kind == 2:
                    body.append(f"  s{tid}{i}: l_{tid} := {g};")
                elif kind == 3:
                    body.append(f"  s{tid}{i}: l_{tid} := l_{tid} + 1;")
                else:
                    body.append(f"  s{tid}{i}: assume(l_{tid} < 2);")
            body.append("}")
            lines.extend(body)
        return "\n".join(lines)

    return build()
