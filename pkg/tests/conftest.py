"""공용 fixture - 작은 합성 데이터셋, 특징 추출기, 난수 포인트 집합"""

import os

import numpy as np
import pytest

from src.config import DEFAULT_CLASSES, DenoiserConfig, ScannerSpec
from src.dataset import load_dataset
from src.generators.scanner import make_dataset
from src.metrics import train_feature_extractor
from src.models import Condition, ObjectSample, PointSet

SLOW_ENV = "LOGEN_SLOW_TESTS"


def pytest_collection_modifyitems(config, items):
    if os.getenv(SLOW_ENV) == "1":
        return
    skip = pytest.mark.skip(reason=f"{SLOW_ENV}=1 일 때만 실행")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def random_points(rng: np.random.Generator, n: int, spread: float = 1.0) -> PointSet:
    xyz = rng.normal(0.0, spread, size=(n, 3))
    intensity = rng.uniform(0.0, 1.0, size=(n, 1))
    return PointSet(np.hstack([xyz, intensity]))


def random_condition(rng: np.random.Generator) -> Condition:
    return Condition(
        phi=float(rng.uniform(-np.pi, np.pi)),
        d=float(rng.uniform(5.0, 30.0)),
        z=float(rng.uniform(-1.5, 0.0)),
        l=float(rng.uniform(1.0, 4.0)),
        w=float(rng.uniform(0.5, 2.0)),
        h=float(rng.uniform(0.5, 2.0)),
    )


def random_samples(rng: np.random.Generator, count: int, cls: str = "vehicle", n_range=(20, 40)):
    return [
        ObjectSample(
            cls=cls,
            points=random_points(rng, int(rng.integers(*n_range)), spread=0.5),
            condition=random_condition(rng),
            name=f"{cls}_{i:05d}",
        )
        for i in range(count)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """기울기 검사 크기의 네트워크 (depth 1, width 8, heads 2)"""
    return DenoiserConfig(variant="logen", depth=1, heads=2, width=8, max_points=8, num_frequencies=4)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """클래스마다 12개씩 스캔한 합성 데이터셋 (train/val 80/20)"""
    path = tmp_path_factory.mktemp("data") / "synth"
    counts = {cls: 12 for cls in DEFAULT_CLASSES}
    make_dataset(list(DEFAULT_CLASSES), counts, ScannerSpec(), seed=0, output_dir=path)
    return load_dataset(path)


@pytest.fixture(scope="session")
def extractor(synthetic_dataset):
    samples = synthetic_dataset.objects(split="train")
    return train_feature_extractor(samples, synthetic_dataset.classes, epochs=5, seed=0)
