import numpy as np
import pytest

from drsan.config import NetworkConfig
from drsan.model import build_network


def tiny_config(**kw) -> NetworkConfig:
    base = dict(c=4, K=1, N=2, scale=2)
    base.update(kw)
    return NetworkConfig(**base)


def randomize(model, seed=0, scale=0.3):
    """Replace every parameter (including biases and slopes) with random values."""
    rng = np.random.default_rng(seed)
    for _, p in model.params.items():
        p.data = (rng.standard_normal(p.data.shape) * scale).astype(p.data.dtype)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return randomize(build_network(tiny_config(), seed=0, dtype=np.float64), seed=5)


# ---------------------------------------------------------------- shared desk-scale training run

DESK_ITERS = 2000


def desk_setup():
    """Tiny model, four synthetic 96x96 images and the training settings used for the overfit run."""
    from drsan.data import Dataset, synthetic_images
    from drsan.training import TrainConfig

    cfg = NetworkConfig(c=8, K=1, N=2, scale=2)
    images = synthetic_images(4, 96, seed=0)
    dataset = Dataset(images, 2)
    # 2000 iterations is far too short for the default lr0; 1e-3 converges in budget
    tcfg = TrainConfig(batch_size=16, lr=1e-3, patch_size=24, iterations=DESK_ITERS, seed=0, log_every=100)
    return cfg, images, dataset, tcfg


def desk_train(out_dir):
    import time

    from drsan.training import train

    cfg, images, dataset, tcfg = desk_setup()
    model = build_network(cfg, seed=tcfg.seed)
    t0 = time.perf_counter()
    result = train(model, dataset, tcfg, out_dir=out_dir)
    return result, images, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_a")
    result, images, seconds = desk_train(out)
    return dict(result=result, images=images, seconds=seconds, out=out)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
