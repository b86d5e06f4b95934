import pytest

from valuemap.catalog import load_catalog
from valuemap.config import shipped_fixture


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def benchmark_csv():
    return shipped_fixture("benchmark_synthetic.csv")


@pytest.fixture(scope="session")
def geometry_path():
    return shipped_fixture("tile_geometry.geojson")


def pytest_terminal_summary(terminalreporter):
    """Print one line per acceptance criterion after the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        status, title, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  ({detail})")
