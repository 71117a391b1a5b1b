import pytest

from rtbq.domain import Campaign, Publisher


@pytest.fixture
def one_pair():
    """One publisher, one campaign with a generous budget."""
    camp = Campaign("c0", target_cpi=10.0, budget=1e6, pcvr=1.0, baseline_installs=10)
    pub = Publisher("p0", floor_price=0.001, landscape_a=1.0, request_rate=5.0, pctr={"c0": 1.0})
    return pub, camp


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
