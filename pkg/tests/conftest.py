from __future__ import annotations

import tempfile
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest

from genhoi.config import RunConfig, Settings
from genhoi.data.generator import DatasetSpec, generate_samples
from genhoi.data.manifest import SceneSample
from genhoi.data.toy import toy_label_space
from genhoi.embeddings.providers import SyntheticTextProvider
from genhoi.label_space import LabelSpace, load_hico_label_space
from genhoi.model.gen import GEN, build_model
from genhoi.oracles import tiny_config


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def temp_config_dir() -> Generator[Path, None, None]:
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def test_settings(temp_dir: Path, temp_config_dir: Path) -> Settings:
    return Settings(
        data_dir=temp_dir / "data",
        runs_dir=temp_dir / "runs",
        config_dir=temp_config_dir,
    )


@pytest.fixture(scope="session")
def toy_ls() -> LabelSpace:
    return toy_label_space()


@pytest.fixture(scope="session")
def hico_ls() -> LabelSpace:
    return load_hico_label_space()


@pytest.fixture
def tiny_run_config() -> RunConfig:
    return tiny_config(seed=0)


@pytest.fixture
def tiny_model(tiny_run_config: RunConfig, toy_ls: LabelSpace) -> GEN:
    provider = SyntheticTextProvider.from_config(tiny_run_config.embedding)
    return build_model(tiny_run_config, toy_ls, provider)


@pytest.fixture
def toy_samples(toy_ls: LabelSpace) -> list[SceneSample]:
    config = RunConfig.preset("toy")
    spec = DatasetSpec(
        n_images=8,
        image_size=64,
        long_tail_exponent=1.0,
        seed=3,
        config=config.data,
    )
    return generate_samples(spec, toy_ls)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: mark test as slow running")
    config.addinivalue_line("markers", "integration: mark test as integration test")
    config.addinivalue_line("markers", "property: mark test as a hypothesis property test")
    config.addinivalue_line("markers", "acceptance: full-size toy runs, hours on a CPU")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    skip_integration = pytest.mark.skip(reason="Integration test - use --run-integration")
    skip_slow = pytest.mark.skip(reason="Slow test - use --run-slow")
    skip_acceptance = pytest.mark.skip(reason="Acceptance run - use --run-acceptance")

    for item in items:
        if "integration" in item.keywords and not config.getoption(
            "--run-integration", default=False
        ):
            item.add_marker(skip_integration)
        if "slow" in item.keywords and not config.getoption("--run-slow", default=False):
            item.add_marker(skip_slow)
        if "acceptance" in item.keywords and not config.getoption(
            "--run-acceptance", default=False
        ):
            item.add_marker(skip_acceptance)


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--run-integration",
        action="store_true",
        default=False,
        help="Run integration tests",
    )
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run slow training tests",
    )
    parser.addoption(
        "--run-acceptance",
        action="store_true",
        default=False,
        help="Run the full-size toy acceptance runs",
    )
