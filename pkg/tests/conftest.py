from importlib import resources

import pytest

from hcfmtts.config import load_config


def desk_config():
    return load_config(str(resources.files("hcfmtts") / "configs" / "desk.cfg"))


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """One full desk training run shared by every test that needs a trained model."""
    from hcfmtts.train import train
    out = tmp_path_factory.mktemp("desk")
    result = train(desk_config(), log_path=out / "metrics.csv", ckpt_dir=out)
    return result, out


ACCEPTANCE = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
