import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from harness.run_config import RunConfig  # noqa: E402
from nets.network_config import NetworkConfig  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _log_dir(tmp_path, monkeypatch):
    # keep log files out of the working tree
    monkeypatch.setattr("utils.logger.LOG_DIR", str(tmp_path / "logs"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_region_config():
    return NetworkConfig(
        input_size=16, base_channels=(2, 2, 4, 4), multiscale=False, cascade_level="none",
        multitask=False, aggregation=False,
    )


@pytest.fixture
def tiny_main_config():
    return NetworkConfig(input_size=16, base_channels=(2, 4, 4, 8), fc_hidden=8)


@pytest.fixture
def tiny_run_config(tmp_path, tiny_region_config):
    """32² phantoms, 16² crops, two epochs"""
    return RunConfig(
        epochs=2,
        batch_size=2,
        num_folds=2,
        half_window=8,
        region=NetworkConfig(
            input_size=32, base_channels=(2, 2, 4, 4), multiscale=False, cascade_level="none",
            multitask=False, aggregation=False,
        ),
        network=NetworkConfig(input_size=16, base_channels=(2, 4, 4, 8), fc_hidden=8),
        out_dir=str(tmp_path / "runs"),
    ).validate()


def crop_like_samples(n, size=16, seed=0):
    """Small samples carrying a preliminary map, standing in for ROI crops"""
    from datapipe.sample import Sample

    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        mask = np.zeros((size, size), dtype=bool)
        r, c = rng.integers(2, size - 7, size=2)
        mask[r:r + 5, c:c + 4] = True
        image = np.clip(0.2 + 0.6 * mask + rng.normal(0, 0.05, (size, size)), 0, 1)
        samples.append(Sample(
            id=f"crop-{i:03d}", image=image, mask=mask, label=i % 3, patient_id=f"P{i}",
            prelim_map=np.clip(0.1 + 0.8 * mask + rng.normal(0, 0.05, (size, size)), 0, 1),
        ))
    return samples


@pytest.fixture
def make_crops():
    return crop_like_samples
