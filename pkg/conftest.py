import pytest

from watermamba.config import ModelConfig
from watermamba.imageio import write_image
from watermamba.rng import Rng
from watermamba.weights import init_weights


@pytest.fixture
def tiny_config():
    return ModelConfig({
        "BASE_WIDTH": 4,
        "STATE_SIZE": 4,
        "BOTTLENECK_BLOCKS": 1,
    })

@pytest.fixture
def tiny_config_path(tmp_path, tiny_config):
    path = tmp_path / "tiny.conf"
    path.write_text(tiny_config.to_text(), encoding="utf-8")
    return path

@pytest.fixture
def tiny_store(tiny_config):
    return init_weights(tiny_config, seed=0)

@pytest.fixture
def image_dirs(tmp_path):
    """ in/ holds a.png, b.png, c.png (no reference) and a corrupt broken.png; ref/ holds a.png and b.png. """
    rng = Rng(7)
    in_dir, ref_dir = tmp_path / "in", tmp_path / "ref"
    in_dir.mkdir()
    ref_dir.mkdir()
    for name in ("a.png", "b.png", "c.png"):
        image = rng.uniform(16 * 16 * 3).reshape(16, 16, 3)
        write_image(image, in_dir / name)
        if name != "c.png":
            write_image(image * 0.9, ref_dir / name)
    (in_dir / "broken.png").write_bytes(b"not really a png")
    return in_dir, ref_dir
