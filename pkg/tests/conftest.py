"""Shared fixtures: the bundled problem instances and their cached default sweeps.

Test modules also run as plain scripts through run_as_script, which prints
[PASS]/[FAIL] per test and resolves fixture arguments from PLAIN_FIXTURES.
"""

import functools
import inspect
import sys
import tempfile
import traceback
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from convergence_lab import DEFAULT_SCHEDULE, SWEEP_TOL, run_sweep  # noqa: E402
from dp_core import relative_value_iteration  # noqa: E402
from model import load_problem  # noqa: E402

PROBLEMS = ROOT / "problems"
SWEEP_JOBS = 4


@functools.lru_cache(maxsize=None)
def load_bundled(name: str):
    return load_problem(PROBLEMS / f"{name}.json")


@functools.lru_cache(maxsize=None)
def sweep_data(name: str):
    """Default-schedule sweep of a bundled instance with its RVI solution."""
    p = load_bundled(name)
    records = run_sweep(p, DEFAULT_SCHEDULE, SWEEP_TOL, jobs=SWEEP_JOBS)
    return p, records, relative_value_iteration(p)


def canon_sweep_data():
    return sweep_data("canon1")


@pytest.fixture(scope="session")
def canon1():
    return load_bundled("canon1")


@pytest.fixture(scope="session")
def convex_pl():
    return load_bundled("convex_pl")


@pytest.fixture(scope="session")
def quasiconvex():
    return load_bundled("quasiconvex")


@pytest.fixture(scope="session")
def example38():
    return load_bundled("example38")


@pytest.fixture(scope="session")
def canon_sweep():
    return canon_sweep_data()


PLAIN_FIXTURES = {
    "canon1": lambda: load_bundled("canon1"),
    "convex_pl": lambda: load_bundled("convex_pl"),
    "quasiconvex": lambda: load_bundled("quasiconvex"),
    "example38": lambda: load_bundled("example38"),
    "canon_sweep": canon_sweep_data,
    "tmp_path": lambda: Path(tempfile.mkdtemp()),
    "monkeypatch": pytest.MonkeyPatch,
}


def run_as_script(namespace: dict) -> int:
    """Run every test_* function in namespace, in definition order."""
    tests = [(name, fn) for name, fn in namespace.items() if name.startswith("test_") and callable(fn)]
    failed = 0
    for name, fn in tests:
        made = {arg: PLAIN_FIXTURES[arg]() for arg in inspect.signature(fn).parameters}
        try:
            fn(**made)
            print(f"[PASS] {name}")
        except Exception:
            failed += 1
            print(f"[FAIL] {name}")
            traceback.print_exc()
        finally:
            if "monkeypatch" in made:
                made["monkeypatch"].undo()
    print(f"\n{len(tests) - failed}/{len(tests)} passed")
    return 1 if failed else 0
