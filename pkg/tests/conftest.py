"""Session fixtures. The heavy artifacts (digit corpus, trained model,
full 10x100 dissection) are built once and cached under tests/_artifacts
so repeated pytest runs stay fast. Delete that directory to rebuild from
scratch.

Set GATEDNET_MNIST_DIR to a directory with the four canonical IDX files
to run the empirical suites against real MNIST instead of the synthetic
stand-in corpus.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from gatednet.data import (TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
                           build_synthetic_digits, load_mnist)
from gatednet.dissect import GateOptConfig, dissect_dataset, load_civs, save_civs
from gatednet.model import GatedNetwork, conv, dense, flatten, load_model, maxpool, mnist5, relu, save_model
from gatednet.train import TrainConfig, train

ARTIFACTS = Path(__file__).parent / "_artifacts"


@pytest.fixture(scope="session")
def data_dir() -> str:
    env = os.environ.get("GATEDNET_MNIST_DIR")
    if env and all(os.path.exists(os.path.join(env, f)) for f in
                   (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS)):
        return env
    d = ARTIFACTS / "digits"
    if not (d / TEST_LABELS).exists():
        build_synthetic_digits(d, seed=0)
    return str(d)


@pytest.fixture(scope="session")
def dataset(data_dir):
    return load_mnist(data_dir)


@pytest.fixture(scope="session")
def trained_net(data_dir, dataset):
    """mnist5 trained with the default config; cached on disk."""
    path = ARTIFACTS / "mnist5.drnm"
    meta_path = ARTIFACTS / "train_meta.json"
    if not path.exists():
        train_set, test_set = dataset
        net = mnist5()
        metrics = train(net, train_set.images, train_set.labels, TrainConfig(),
                        test_set.images, test_set.labels)
        ARTIFACTS.mkdir(exist_ok=True)
        save_model(net, path)
        meta_path.write_text(json.dumps(
            {"test_accuracy": metrics[-1].test_accuracy}))
    return load_model(path)


@pytest.fixture(scope="session")
def trained_accuracy(trained_net) -> float:
    return json.loads((ARTIFACTS / "train_meta.json").read_text())["test_accuracy"]


@pytest.fixture(scope="session")
def dissection(trained_net, dataset):
    """Full 10-class x 100-image dissection with the default gate config;
    cached. Returns (civs dict, metadata dict with elapsed seconds and
    fallback rate)."""
    civ_path = ARTIFACTS / "mnist5.civ.csv"
    meta_path = ARTIFACTS / "dissect_meta.json"
    if not civ_path.exists():
        train_set, _ = dataset
        t0 = time.monotonic()
        result = dissect_dataset(trained_net, train_set.images, train_set.labels,
                                 100, GateOptConfig())
        elapsed = time.monotonic() - t0
        save_civs(result.civs, trained_net, civ_path)
        meta_path.write_text(json.dumps(
            {"elapsed_seconds": elapsed, "fallback_rate": result.fallback_rate}))
    return load_civs(civ_path), json.loads(meta_path.read_text())


@pytest.fixture
def toy_net():
    """Small random gated net (5 gated channels, 1x8x8 input, 4 classes)
    for fast structural tests."""
    specs = [
        conv(1, 2, 3, padding=1), relu(), maxpool(2),
        conv(2, 3, 3, padding=1), relu(), maxpool(2),
        flatten(),
        dense(3 * 2 * 2, 4),
    ]
    net = GatedNetwork(specs, (1, 8, 8), 4)
    net.init_parameters(np.random.default_rng(42))
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(123)
