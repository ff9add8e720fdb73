import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from gridforge.cli import main
from gridforge.taxonomy import load_taxonomy

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def taxonomy():
    return load_taxonomy()


@pytest.fixture
def workspace(tmp_path):
    """A private copy of the fixture sources and configs."""
    for sub in ("data", "sources", "configs"):
        shutil.copytree(FIXTURES / sub, tmp_path / sub)
    return tmp_path


def invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


def build(ws: Path, config: str = "timeseries"):
    """Ingest and build one fixture config; returns (ingest result, build result)."""
    cfg = ws / "configs" / f"{config}.json"
    ing = invoke("ingest", "--config", cfg, "--cache", ws / "cache")
    out = invoke("build", "--config", cfg, "--cache", ws / "cache")
    return ing, out


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
