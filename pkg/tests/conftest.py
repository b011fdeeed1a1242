import re
from collections import defaultdict

# acceptance tests are named test_cNN[x]_...; their outcomes are folded into
# one line per criterion at the end of the run
_ACCEPT = re.compile(r"test_c(\d\d)([a-z]?)_(\w+)")
_results = defaultdict(list)

TITLES = {
    1: "forward-limit convergence",
    2: "closed-form marginal vs stepwise simulation",
    3: "posterior vs grid Bayes",
    4: "zero-noise posterior identity",
    5: "gradient vs finite differences",
    6: "reverse-step marginal preservation",
    7: "end-to-end 1-D generation (W1)",
    8: "reverse recursions bit-identical",
    9: "cold diffusion (a fixed point, b iterative <= one-step, c DPM equivalence)",
    10: "novelty identity and brute-force scores",
    11: "SDE consistency gap",
    12: "CLI replay determinism",
}


def pytest_runtest_logreport(report):
    m = _ACCEPT.match(report.head_line.split(".")[-1].split("[")[0]) if report.head_line else None
    if m is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _results[int(m.group(1))].append((m.group(2), report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_results):
        parts = _results[k]
        ok = all(o == "passed" for _, o, _ in parts)
        notes = "; ".join(f"{sub + ': ' if sub else ''}{'ok' if o == 'passed' else o}"
                          f"{' (' + d + ')' if d else ''}" for sub, o, d in parts)
        tr.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {TITLES.get(k, '')}  [{notes}]")
