import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aqplab.catalog import INT64, TEXT, Catalog, TableDef  # noqa: E402
from aqplab.workload import GenSpec, generate  # noqa: E402


def tdef(name, cols, fks=(), pk="id"):
    return TableDef(name, tuple((c, INT64 if t == "i" else TEXT) for c, t in cols), pk, tuple(fks))


@pytest.fixture(scope="session")
def workloads(tmp_path_factory):
    """Generated presets, built once per session and loaded lazily."""
    root = tmp_path_factory.mktemp("wl")
    made: dict[str, tuple[Path, dict]] = {}

    def get(preset: str, **kw):
        key = preset + repr(sorted(kw.items()))
        if key not in made:
            out = root / f"{preset}_{len(made)}"
            made[key] = (out, generate(GenSpec(preset, **kw), out))
        return made[key]

    return get


@pytest.fixture(scope="session")
def loaded(workloads):
    cache: dict[str, Catalog] = {}

    def get(preset: str, **kw):
        out, manifest = workloads(preset, **kw)
        if str(out) not in cache:
            c = Catalog()
            c.load_directory(out)
            cache[str(out)] = c
        return out, manifest, cache[str(out)]

    return get


@pytest.fixture
def tiny_catalog():
    """Three-table movie schema small enough for nested-loop checks."""
    c = Catalog()
    c.add_table(tdef("kind", [("id", "i"), ("name", "t")]), {"id": [0, 1, 2], "name": ["movie", "tv", "short"]})
    c.add_table(
        tdef("movie", [("id", "i"), ("kind_id", "i"), ("year", "i"), ("title", "t")], [("kind_id", "kind", "id")]),
        {"id": list(range(8)), "kind_id": [0, 0, 1, 2, 0, 1, 1, 0],
         "year": [1990, 2000, 2000, 2010, 1995, 2005, 2010, 2020],
         "title": ["alpha", "beta", "gamma", "delta", "alps", "bet", "gam", "zeta"]},
    )
    c.add_table(
        tdef("cast", [("id", "i"), ("movie_id", "i"), ("role", "i")], [("movie_id", "movie", "id")]),
        {"id": list(range(12)), "movie_id": [0, 0, 1, 2, 2, 2, 3, 4, 5, 5, 7, 7],
         "role": [1, 2, 1, 3, 1, 2, 1, 1, 2, 2, 3, 1]},
    )
    return c


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
