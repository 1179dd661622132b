import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(ROOT, "configs")


@pytest.fixture(scope="session")
def teacher_forced_run():
    """Default-config teacher-forced training (shared: it takes ~40 s)."""
    import time

    from wettrack.channel import ChannelDynamics
    from wettrack.numerics import Rng
    from wettrack.tracker import TrackerArch, TrainConfig, build_tracker, train

    tr = build_tracker(TrackerArch(), Rng(0).spawn(7))
    t0 = time.perf_counter()
    report = train(tr, TrainConfig(), ChannelDynamics(), 1.0)
    return tr, report, time.perf_counter() - t0


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def paper_config():
    from wettrack.harness import load_config
    return load_config(os.path.join(CONFIG_DIR, "paper.toml"))


@pytest.fixture(scope="session")
def paper_tracker(paper_config):
    """Tracker trained with the shipped full-scale config (teacher forcing + closed-loop fine-tuning)."""
    from wettrack.harness import obtain_tracker
    return obtain_tracker(paper_config)
