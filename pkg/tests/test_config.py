import pytest

from vesselgan.config import RUN_LENGTH_KEYS, RunConfig
from vesselgan.errors import ConfigError


def test_defaults_hold_the_reported_hyperparameters():
    cfg = RunConfig()
    assert cfg.objective.lam == 10
    assert cfg.optimizer_g.lr0 == cfg.optimizer_d.lr0 == 0.002
    assert cfg.optimizer_g.decay_factor == 0.75
    assert cfg.optimizer.momentum_m == 0.002
    assert cfg.train.batch_size == 4 and cfg.train.epochs == 200
    assert cfg.generator.depth == 5 and cfg.discriminator.depth == 3
    assert cfg.patch.size == 128 and cfg.patch.stride == 64


def test_text_round_trip():
    cfg = RunConfig.from_text("objective.lambda = 3.5\noptimizer.g.lr0 = 0.001\naugment.enabled = false\n")
    assert cfg.objective.lam == 3.5 and cfg.optimizer_g.lr0 == 0.001 and cfg.augment.enabled is False
    again = RunConfig.from_text(cfg.to_text())
    assert again.to_text() == cfg.to_text()
    assert "objective.lambda = 3.5" in cfg.to_text()


def test_comments_and_blank_lines():
    cfg = RunConfig.from_text("# header\n\ntrain.seed = 7  # trailing\n")
    assert cfg.train.seed == 7


@pytest.mark.parametrize(
    "text",
    ["nosuch.key = 1", "train.seed = x", "train.seed", "generator.depth = 0", "patch.size = 100", "eval.threshold = mean", "augment.enabled = maybe"],
)
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_identity_hash_ignores_run_length_only():
    base = RunConfig()
    longer = RunConfig.from_text("train.epochs = 500\ntrain.max_steps = 3\ntrain.checkpoint_every = 9\n")
    assert base.identity_hash() == longer.identity_hash()
    assert base.to_text() != longer.to_text()
    assert RunConfig.from_text("train.seed = 1").identity_hash() != base.identity_hash()
    assert set(RUN_LENGTH_KEYS) <= {k for k, _ in base.items()}


def test_unreadable_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.read(tmp_path / "missing.cfg")
