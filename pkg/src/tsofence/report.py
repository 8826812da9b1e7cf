"""Run reports: structured output, delimited tables, figures.

The structured format is one JSON document per run:

    {
      "program": "peterson",
      "verdict": "safe" | "unsafe-sc" | "unsafe-tso" | "bound-exhausted",
      "k": <bound at the verdict>,
      "k0": <fixed-point bound, safe runs only>,
      "fences": [{"process": "P1", "after_label": "a2"}, ...],
      "counterexample": ["step P1 a1", "flush P1 flag1=1", ...],
      "stats": {"per_k": [{"k": 0, "states": 828, "projected": 412,
                           "millis": 3.1}, ...]}
    }

Field names are the compatibility contract.  Events render as
`step <tid> <label>` and `flush <tid> <var>=<value>` and parse back with
parse_event, so a stored counterexample can be replayed for validation.

When a report directory is given, the same data is written as a
tab-separated table plus matplotlib figures (state counts against the
buffer bound; fence totals for a benchmark run).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .explore import (
    BoundExhausted,
    ReachResult,
    SafeAtFixedPoint,
    UnsafeSC,
    UnsafeTSO,
    Verdict,
)
from .semantics import Event, Flush, Step


@dataclass
class RunReport:
    program: str
    verdict: str
    k: int | None
    k0: int | None
    fences: list[tuple[str, str]]
    counterexample: list[Event]
    per_k: list[ReachResult]
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "program": self.program,
            "verdict": self.verdict,
            "k": self.k,
            "k0": self.k0,
            "fences": [
                {"process": tid, "after_label": label} for (tid, label) in self.fences
            ],
            "counterexample": [ev.render() for ev in self.counterexample],
            "stats": {
                "per_k": [
                    {
                        "k": r.k,
                        "states": r.visited,
                        "projected": len(r.projected) if r.projected is not None else None,
                        "millis": round(r.millis, 3),
                    }
                    for r in self.per_k
                ]
            },
            **({"note": self.note} if self.note else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def verdict_fields(verdict: Verdict) -> tuple[str, int | None, int | None]:
    """(name, k-at-verdict, fixed-point-k0) for a search verdict."""
    if isinstance(verdict, SafeAtFixedPoint):
        return "safe", verdict.k0 + 1, verdict.k0
    if isinstance(verdict, UnsafeSC):
        return "unsafe-sc", 0, None
    if isinstance(verdict, UnsafeTSO):
        return "unsafe-tso", verdict.k, None
    if isinstance(verdict, BoundExhausted):
        return "bound-exhausted", verdict.k_max, None
    raise TypeError(f"unknown verdict {verdict!r}")


EXIT_CODES = {
    "safe": 0,
    "unsafe-sc": 1,
    "unsafe-tso": 2,
    "bound-exhausted": 3,
    "resource-exhausted": 3,
}


def render_text(report: RunReport) -> str:
    lines = [f"{report.program}: {report.verdict}"
             + (f" (fixed point at k0={report.k0})" if report.k0 is not None else
                f" (k={report.k})" if report.k is not None else "")]
    for (tid, label) in report.fences:
        lines.append(f"fence: {tid} after {label}")
    if report.counterexample:
        lines.append("counterexample:")
        lines.extend(f"  {ev.render()}" for ev in report.counterexample)
    for r in report.per_k:
        proj = len(r.projected) if r.projected is not None else "-"
        lines.append(f"  k={r.k}: states={r.visited} projected={proj} "
                     f"millis={r.millis:.1f}")
    if report.note:
        lines.append(f"note: {report.note}")
    return "\n".join(lines)


def parse_event(text: str) -> Event:
    """Inverse of Event.render()."""
    parts = text.split()
    if len(parts) == 3 and parts[0] == "step":
        return Step(parts[1], parts[2])
    if len(parts) == 3 and parts[0] == "flush":
        var, _, value = parts[2].partition("=")
        if not _:
            raise ValueError(f"malformed flush event: {text!r}")
        return Flush(parts[1], var, int(value))
    raise ValueError(f"malformed event: {text!r}")


def load_report(path) -> dict:
    """Read a structured report back; counterexample events are parsed."""
    doc = json.loads(Path(path).read_text())
    doc["counterexample"] = [parse_event(s) for s in doc.get("counterexample", [])]
    return doc


def read_events_file(path) -> list[Event]:
    events = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("//"):
            continue
        events.append(parse_event(line))
    return events


# ---------------------------------------------------------------------------
# Report directory: delimited tables + figures
# ---------------------------------------------------------------------------

def write_run_files(report: RunReport, outdir) -> list[Path]:
    """Write <name>.json, <name>_per_k.tsv and <name>_states.png."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    jpath = outdir / f"{report.program}.json"
    jpath.write_text(report.to_json() + "\n")
    written.append(jpath)

    tpath = outdir / f"{report.program}_per_k.tsv"
    rows = ["k\tstates\tprojected\tmillis"]
    for r in report.per_k:
        proj = len(r.projected) if r.projected is not None else ""
        rows.append(f"{r.k}\t{r.visited}\t{proj}\t{r.millis:.3f}")
    tpath.write_text("\n".join(rows) + "\n")
    written.append(tpath)

    if report.per_k:
        written.append(_states_figure(report, outdir))
    return written


def _states_figure(report: RunReport, outdir: Path) -> Path:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ks = [r.k for r in report.per_k]
    states = [r.visited for r in report.per_k]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.plot(ks, states, "o-", label="states visited")
    proj = [(r.k, len(r.projected)) for r in report.per_k if r.projected is not None]
    if proj:
        ax.plot([p[0] for p in proj], [p[1] for p in proj], "s--",
                label="projected set")
    ax.set_xlabel("buffer bound k")
    ax.set_ylabel("count")
    ax.set_title(f"{report.program}: {report.verdict}")
    ax.legend(fontsize=8)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    path = outdir / f"{report.program}_states.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


BENCH_COLUMNS = ["program", "verdict", "k", "k0", "fences", "states", "millis"]


def write_bench_files(rows: list[dict], outdir) -> list[Path]:
    """bench.tsv plus summary figures for a corpus run."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    tpath = outdir / "bench.tsv"
    out = ["\t".join(BENCH_COLUMNS)]
    for row in rows:
        out.append("\t".join(str(row.get(c, "")) for c in BENCH_COLUMNS))
    tpath.write_text("\n".join(out) + "\n")
    written.append(tpath)

    ok = [r for r in rows if r.get("verdict") not in (None, "error")]
    if ok:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        names = [r["program"] for r in ok]
        fences = [r["fences"] for r in ok]
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        ax.bar(range(len(names)), fences, color="#4878d0")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("fences synthesized")
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
        fig.tight_layout()
        fpath = outdir / "bench_fences.png"
        fig.savefig(fpath, dpi=120)
        plt.close(fig)
        written.append(fpath)

        states = [r["states"] for r in ok]
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        ax.bar(range(len(names)), states, color="#6acc64")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("states visited (total)")
        ax.set_yscale("log")
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
        fig.tight_layout()
        spath = outdir / "bench_states.png"
        fig.savefig(spath, dpi=120)
        plt.close(fig)
        written.append(spath)

    return written
