import numpy as np
import pytest

from phantomflow.phantom import default_manifest, default_phantom, synth_phantom
from phantomflow.volume import LabelVolume, ScanManifest


def small_manifest(n=9, size=128, px=0.4):
    return ScanManifest.create(n, size, size, px, 60.0 * n / 85, source_id="test")


@pytest.fixture(scope="session")
def resected_phantom():
    return synth_phantom(default_phantom(True, seed=0), default_manifest())


@pytest.fixture(scope="session")
def unresected_phantom():
    return synth_phantom(default_phantom(False, seed=0), default_manifest())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def label_volume(labels, px=0.1):
    labels = np.asarray(labels, dtype=np.uint8)
    if labels.ndim == 2:
        labels = labels[None]
    n, h, w = labels.shape
    return LabelVolume(ScanManifest.create(n, w, h, px, float(n)), labels)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    term = request.config.pluginmanager.get_plugin("terminalreporter")

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        if term is not None:
            term.write_line("")
            term.write_line(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
