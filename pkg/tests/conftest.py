import numpy as np
import pytest

from elltorus.series import Dimensions, PoissonSeries, TermKey, TruncationLimits


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_series(rng, dims, limits, nterms=12, j1=None, j2=None, kmax=None):
    kmax = limits.max_trig if kmax is None else kmax
    terms = []
    while len(terms) < nterms:
        dp = tuple(int(v) for v in rng.integers(0, 2, dims.n1))
        dxy = tuple(int(v) for v in rng.integers(0, 2, 2 * dims.n2))
        if j1 is not None and sum(dp) != j1:
            continue
        if j2 is not None and sum(dxy) != j2:
            continue
        if not limits.admits(sum(dp), sum(dxy)):
            continue
        k = tuple(int(v) for v in rng.integers(-2, 3, dims.n1))
        if sum(abs(v) for v in k) > kmax:
            continue
        parity = "c" if rng.random() < 0.5 or not any(k) else "s"
        terms.append((TermKey(dp, dxy, k, parity), float(rng.normal())))
    return PoissonSeries.from_terms(dims, limits, terms)


# one line per acceptance criterion, filled in by test_acceptance and echoed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
