import numpy as np
import pytest

from piguiqa.benchmarks import build_dataset, manifest_samples, write_manifest
from piguiqa.local import NAConfig
from piguiqa.perception import BackboneConfig

TINY_NA = NAConfig(embed_dim=8, heads=2, window=5, blocks=1)
TINY_BACKBONE = BackboneConfig(widths=(4, 8), blocks=(1, 1), groups=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """6 scenes x 3 severities at 48 px, manifest included."""
    out = tmp_path_factory.mktemp("synth")
    entries = build_dataset(6, 3, seed=5, out_dir=out, size=48)
    write_manifest(out / "manifest.jsonl", entries, {"seed": 5})
    return out, entries, manifest_samples(out / "manifest.jsonl")


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """The desk-scale benchmark: 40 scenes x 5 severities, pseudo-MOS targets."""
    out = tmp_path_factory.mktemp("desk")
    entries = build_dataset(40, 5, seed=0, out_dir=out, size=64)
    write_manifest(out / "manifest.jsonl", entries, {"seed": 0})
    return manifest_samples(out / "manifest.jsonl")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
