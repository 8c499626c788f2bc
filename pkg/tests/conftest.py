import time

import numpy as np
import pytest

from robustfe import experiments

CRITERIA = {
    1: "NMF divergence monotone over 500 iterations",
    2: "NMF planted factorization recovered",
    3: "DCT and lifter match direct-summation oracle",
    4: "SPLICE recovers planted affine maps; both solution routes agree",
    5: "M-SPLICE whitening and mean-mapping identities",
    6: "diagonal M-SPLICE equals full M-SPLICE on diagonal data",
    7: "EM monotone; two-cluster means recovered",
    8: "MLLR translation recovery and auxiliary optimum",
    9: "HEQ output quantiles match reference",
    10: "non-stereo mixture correspondence is diagonal",
    11: "directional denoising on synthetic stereo corpus",
    12: "mix_noise hits target SNR",
    13: "end-to-end determinism",
}

_outcomes: dict[int, list[tuple[str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    number = getattr(report, "criterion", None)
    if number is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(number, []).append((report.nodeid, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        results = _outcomes.get(number)
        if not results:
            status = "NOT RUN"
        elif all(outcome == "passed" for _, outcome in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status:<7} {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def denoising(tmp_path_factory):
    """Full synthetic denoising run, shared by the acceptance and eval tests."""
    t0 = time.perf_counter()
    result = experiments.denoising_experiment(tmp_path_factory.mktemp("denoise"))
    result.elapsed = time.perf_counter() - t0
    for tag, row in sorted(result.table.items()):
        print(f"snr {tag:>3}: " + "  ".join(f"{k}={v:.3f}" for k, v in row.items()))
    return result
