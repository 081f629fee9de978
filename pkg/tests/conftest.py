import time
from collections import OrderedDict

import pytest

from asgan.training import TrainConfig, train

# criterion number -> [title, all parts passed, seconds]
_ACCEPTANCE: "OrderedDict[int, list]" = OrderedDict()

OVERFIT_CONFIG = dict(resolution=64, data="synthetic:8", batch_size=1, lambda_l1=100.0,
                      max_iterations=1000, epochs=10**6, seed=0)

TINY_ARCH = {"kind": "asgan", "resolution": 8, "num_attributes": 3, "widths": [4, 8],
             "embed_dim": 4, "disc_widths": [4, 8]}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = mark.args
        entry = _ACCEPTANCE.setdefault(number, [title, True, 0.0])
        entry[1] = entry[1] and rep.passed
        entry[2] += rep.duration


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, secs = _ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}  ({secs:.1f}s)")


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    """1000 iterations on 8 synthetic 64x64 triplets, shared by several checks."""
    out = tmp_path_factory.mktemp("overfit")
    cfg = TrainConfig(**OVERFIT_CONFIG)
    t0 = time.perf_counter()
    state = train(cfg, out_dir=out)
    return {"state": state, "dir": out, "seconds": time.perf_counter() - t0, "config": cfg}
