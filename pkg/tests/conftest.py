import logging
import os
import warnings
from pathlib import Path

import numpy as np
import pytest

from gormkit import io as mapio
from gormkit.config import RunConfig
from gormkit.kinematics import default_arm
from gormkit.rmap import build_rm

CACHE = Path(os.environ.get("GORMKIT_TEST_CACHE", Path.home() / ".cache" / "gormkit-tests"))

warnings.filterwarnings("ignore", message=".*TBB.*")


def cached_map(cfg: RunConfig):
    """Map for ``cfg``, built once and kept on disk keyed by the config digest."""
    path = CACHE / f"rm-{cfg.digest()[:16]}.gorm"
    if path.exists():
        return mapio.load_map(path)
    logging.getLogger(__name__).warning("building map for %s (cached at %s)", cfg.digest()[:16], path)
    rm = build_rm(cfg.build_arm(), cfg.grid_spec(), cfg.orientation_set(), cfg.ik_params(),
                  cfg.ik.seeds_per_pose, cfg.seed)
    mapio.save_map(path, rm)
    return rm


SMALL_CONFIG = {"grid": {"spacing": 0.2}, "orientations": {"n_dirs": 8, "n_rolls": 4}}


@pytest.fixture(scope="session")
def arm():
    return default_arm()


@pytest.fixture(scope="session")
def small_config():
    return RunConfig.model_validate(SMALL_CONFIG)


@pytest.fixture(scope="session")
def small_map(small_config):
    """20 cm grid, 8 x 4 orientations."""
    return cached_map(small_config)


@pytest.fixture(scope="session")
def default_config():
    return RunConfig()


@pytest.fixture(scope="session")
def default_map(default_config):
    """Full-resolution 5 cm map (about 8 minutes to build on one core, then cached)."""
    return cached_map(default_config)


@pytest.fixture(scope="session")
def default_orm(default_config, default_map, arm):
    return default_config.orm_for(default_map, arm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record a one-line acceptance verdict, then assert it."""

    def record(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
        VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)
