import json

import pytest

from geofactors.synth import generate_synthetic

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    _, outcomes = _CRITERIA.setdefault(number, (title, []))
    outcomes.append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        ok = outcomes and all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """A reduced synthetic input set that keeps the full pipeline under a few seconds."""
    out = tmp_path_factory.mktemp("synth_small")
    paths = generate_synthetic(out, units=60, features=40, days=20, planted_relevant=8,
                               blob_count=3, seed=11)
    cfg = json.loads(paths["config"].read_text())
    cfg["tsne"]["perplexity"] = 10.0
    cfg["cluster"]["n_init"] = 4
    paths["config"].write_text(json.dumps(cfg, indent=2))
    return out
