from pathlib import Path

import pytest

from latentbridge.config import RunConfig
from latentbridge.errors import UsageError


def test_defaults():
    c = RunConfig()
    assert (c.latent_dim, c.genes, c.feature_shape, c.image_size) == (8, 50, (16, 4, 4), 32)
    assert (c.image_epochs, c.rna_epochs, c.lr) == (160, 300, 0.001)
    assert (c.gp_sigma, c.jitter, c.steps, c.k) == (0.5, 1e-8, 20, 3)


def test_text_roundtrip():
    c = RunConfig(delta=7.5, seed=12, image_from_true_features=True, feature_shape=(4, 2, 2))
    assert RunConfig.from_text(c.to_text()) == c


def test_headerless_and_lambda_key():
    c = RunConfig.from_text("lambda = 2.5\nphi = 0  # no anchors\n")
    assert c.lam == 2.5 and c.phi == 0.0


def test_published_preset():
    c = RunConfig.published()
    assert (c.latent_dim, c.genes, c.image_epochs, c.rna_epochs, c.lr) == (50, 2432, 160, 300, 0.001)


@pytest.mark.parametrize("text", [
    "latent_dim = 0", "lr = 0", "delta = -1", "steps = 1", "unknown = 3", "k = three",
    "feature_shape = 4,4", "gp_sigma = -0.5", "seed = -1", "beta = nan",
])
def test_invalid(text):
    with pytest.raises(UsageError):
        RunConfig.from_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        RunConfig.load(tmp_path / "nope.ini")


def test_shipped_configs():
    root = Path(__file__).resolve().parents[1] / "configs"
    assert RunConfig.load(root / "desk.ini").delta == 10.0
    assert RunConfig.load(root / "published.ini") == RunConfig.published()


def test_leading_comment_with_section():
    assert RunConfig.from_text("# note\n[run]\nk = 4\n").k == 4
