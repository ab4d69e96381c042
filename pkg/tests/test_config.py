from importlib import resources

import pytest

from hcfmtts.config import (FULL_MODEL, ModelConfig, TrainConfig, dump_config, from_pairs,
                            load_config, parse_pairs)
from hcfmtts.errors import ConfigError


def shipped(name):
    return str(resources.files("hcfmtts") / "configs" / name)


def test_parse_comments_and_whitespace():
    pairs = parse_pairs("# run\nsteps = 10   # short\n\nmodel.dit_layers=3\n")
    assert pairs == {"steps": "10", "model.dit_layers": "3"}


def test_typed_fields():
    cfg = from_pairs({"steps": "100", "peak_lr": "1e-3", "model.tiers": "phon,syll"})
    assert cfg.steps == 100 and cfg.peak_lr == 1e-3
    assert cfg.model.active_tiers == ("phon", "syll")


@pytest.mark.parametrize("pairs", [{"stepz": "1"}, {"model.layers": "2"}, {"mel.bins": "3"}])
def test_unknown_key_is_error(pairs):
    with pytest.raises(ConfigError, match="unknown"):
        from_pairs(pairs)


@pytest.mark.parametrize("pairs", [
    {"steps": "ten"}, {"steps": "10", "warmup_steps": "10"}, {"clip": "0"},
    {"batch_size": "0"}, {"model.dit_hidden": "30", "model.dit_heads": "4"},
    {"model.tiers": "syll,pros"}, {"model.attn_dropout": "1.0"}, {"mel.n_mels": "8"},
])
def test_invalid_values(pairs):
    with pytest.raises(ConfigError):
        from_pairs(pairs)


def test_missing_equals_sign():
    with pytest.raises(ConfigError, match="line 2"):
        parse_pairs("steps = 1\nbogus\n")


def test_dump_round_trip():
    cfg = from_pairs({"steps": "77", "model.mel_bins": "20", "hca_weight": "0.5"})
    assert from_pairs(parse_pairs(dump_config(cfg))) == cfg


def test_shipped_desk_config():
    cfg = load_config(shipped("desk.cfg"))
    assert (cfg.steps, cfg.batch_size, cfg.seed, cfg.corpus_items) == (500, 8, 42, 64)
    assert cfg.model.mel_bins == cfg.mel.n_mels == 16


def test_shipped_full_config_matches_preset():
    cfg = load_config(shipped("full.cfg"))
    assert cfg.model == FULL_MODEL
    assert (cfg.beta1, cfg.beta2, cfg.clip, cfg.peak_lr) == (0.9, 0.98, 1.2, 3e-4)
    assert cfg.mel.n_mels == 80


def test_lambdas_follow_active_tiers():
    cfg = TrainConfig().with_tiers("phon")
    assert cfg.lambdas == {"phon": 1.0, "syll": 0.0, "pros": 0.0}
    assert ModelConfig().active_tiers == ("phon", "syll", "pros")
