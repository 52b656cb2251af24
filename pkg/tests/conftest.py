import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
TOOLS = ROOT / ".tools"
VALIDATOR_VERSION = "2.0.0-dev.3.10"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _install_validator():
    mods = TOOLS / "node_modules"
    if (mods / "gltf-validator").is_dir():
        return mods
    if shutil.which("npm") is None or shutil.which("node") is None:
        return None
    TOOLS.mkdir(exist_ok=True)
    subprocess.run(["npm", "install", "--silent", "--no-audit", "--no-fund", "--prefix", str(TOOLS),
                    f"gltf-validator@{VALIDATOR_VERSION}"], check=True, capture_output=True, timeout=300)
    return mods


@pytest.fixture(scope="session")
def gltf_validator():
    """Callable returning the Khronos validator's summary dict for a .gltf path."""
    mods = _install_validator()
    if mods is None:
        pytest.skip("node/npm not available for the Khronos glTF validator")
    script = Path(__file__).parent / "support" / "validate_gltf.js"

    def validate(path):
        out = subprocess.run(["node", str(script), str(mods), str(path)], check=True,
                             capture_output=True, text=True, timeout=120)
        return json.loads(out.stdout.strip().splitlines()[-1])
    return validate


# --- acceptance summary: one PASS/FAIL line per criterion ---------------------------

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    results = item.config.stash[_CRITERIA]
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or rep.failed or rep.skipped:
        # a skipped criterion counts as a failure
        ok = rep.passed and rep.when == "call"
        if not ok and not detail:
            detail = rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        if number not in results or results[number][0]:
            results[number] = (ok, title, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_CRITERIA]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title, detail = results[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
