import time

import pytest

from themegen.embedding import EmbedConfig, train_embedding, training_fragments
from themegen.synth import synth_corpus

# desk-scale embedding shared by the separation and retrieval criteria
ACCEPTANCE_EMBED = EmbedConfig(layers=2, hidden=64, heads=4, ff=128, batch=128, steps=1000, lr=4e-3)
ACCEPTANCE_CORPUS = dict(n=300, seed=1)

_outcomes: dict[int, list[str]] = {}
_details: dict[int, list[str]] = {}


@pytest.fixture(scope="session")
def trained_embedding():
    """(store, config, fragments, training seconds)."""
    pieces = [p for p, _ in synth_corpus(**ACCEPTANCE_CORPUS)]
    fragments = training_fragments(pieces)
    t0 = time.perf_counter()
    store, _ = train_embedding(fragments, ACCEPTANCE_EMBED)
    return store, ACCEPTANCE_EMBED, fragments, time.perf_counter() - t0


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes.setdefault(marker.args[0], []).append(report.outcome)
        _details.setdefault(marker.args[0], []).extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        seen = _outcomes[n]
        if "failed" in seen:
            verdict = "FAIL"
        elif all(o == "skipped" for o in seen):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        detail = "; ".join(_details.get(n, []))
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}" + (f"  ({detail})" if detail else ""))
