import numpy as np
import pytest
from PIL import Image

from tsrnet.config import TrainConfig


def write_images(root, n=2, size=(24, 20), seed=0):
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        # smooth-ish content so every crop is non-trivial
        y, x = np.mgrid[0:size[0], 0:size[1]]
        base = 0.5 + 0.4 * np.sin(x / (3 + i) + y / 4)[..., None] * np.array([1.0, 0.6, 0.3])
        px = np.clip(255 * base + rng.normal(0, 8, base.shape), 0, 255).astype(np.uint8)
        Image.fromarray(px, "RGB").save(root / f"img{i:02d}.png")
    return root


@pytest.fixture
def image_dir(tmp_path):
    return write_images(tmp_path / "train")


@pytest.fixture
def tiny_config(tmp_path, image_dir):
    cfg = TrainConfig()
    cfg.model.channels = 4
    cfg.model.tree_depth = 1
    cfg.model.fusion_depth = 1
    cfg.train.epochs = 1
    cfg.train.batch_size = 3
    cfg.train.crops_per_image = 2
    cfg.train.patch_hr = 8
    cfg.train.checkpoint_every = 1
    cfg.data.train_dir = str(image_dir)
    cfg.data.output_dir = str(tmp_path / "run")
    return cfg


# -- acceptance summary ----------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA[n] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} ({title}): {status}")
