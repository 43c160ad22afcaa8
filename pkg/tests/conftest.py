import numpy as np
import pytest
import torch

from egostereo.synthetic import SyntheticSceneConfig, generate_synthetic


@pytest.fixture(scope="session")
def tiny_config():
    return SyntheticSceneConfig(num_sequences=2, num_frames=12, motion_seed=3, depth_dropout_prob=0.3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_config):
    """Two short synthetic sequences shared by the fast tests. Treat as read-only."""
    return generate_synthetic(tiny_config, tmp_path_factory.mktemp("tiny"))


@pytest.fixture(autouse=True)
def _seed():
    np.random.seed(0)
    torch.manual_seed(0)


# ---------------------------------------------------------------------------
# Acceptance summary: one line per criterion at the end of the run
# ---------------------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, title = marker.args
    entry = _CRITERIA.setdefault(cid, {"title": title, "ok": True, "seconds": 0.0, "notes": []})
    entry["seconds"] += rep.duration
    if rep.failed:
        entry["ok"] = False
    if rep.when == "call":
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c[1:])):
        e = _CRITERIA[cid]
        status = "PASS" if e["ok"] else "FAIL"
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"{cid:<4} {status}  {e['title']}  [{e['seconds']:.1f} s]  {notes}".rstrip())
