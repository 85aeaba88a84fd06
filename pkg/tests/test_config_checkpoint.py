"""Run configuration files and binary checkpoints."""
from __future__ import annotations

import numpy as np
import pytest

from advframe.checkpoint import (CheckpointError, dumps_checkpoint, load_checkpoint, loads_checkpoint,
                                 save_checkpoint)
from advframe.config import ConfigError, CorpusRef, RunConfig


def test_default_config_round_trips_through_toml():
    cfg = RunConfig()
    again = RunConfig.loads(cfg.dumps())
    assert again == cfg and again.hash() == cfg.hash()


def test_config_with_paths_and_overrides(tmp_path):
    text = """
seed = 3
[paths]
lexicon = "lex.json"
train = ["a.conll", {path = "b.conll", domain = 1, split = "train"}]
val = {path = "b.conll", domain = 1, split = "val"}
[train]
epochs = 4
mode = "adversarial"
lambda_pin = 0.0
clip_norm = 0.0
[experiment]
seeds = [1, 2]
"""
    cfg = RunConfig.loads(text)
    assert cfg.paths.train == (CorpusRef("a.conll"), CorpusRef("b.conll", 1, "train"))
    assert cfg.paths.val == CorpusRef("b.conll", 1, "val")
    assert cfg.train.lambda_pin == 0.0 and cfg.train.clip_norm is None
    assert cfg.experiment.seeds == (1, 2)
    assert RunConfig.loads(cfg.dumps()) == cfg
    assert cfg.with_seed(9).train.seed == 9
    (tmp_path / "c.toml").write_text(text)
    assert RunConfig.load(tmp_path / "c.toml") == cfg


@pytest.mark.parametrize("text,needle", [
    ("[nett]\n", "unknown config sections"),
    ("[train]\nlearning_rat = 1.0\n", "unknown keys in [train]"),
    ("[train]\nmode = 'both'\n", "mode"),
    ("[decoder]\ndelta = 1.0\n", "delta"),
    ("[synth]\nnull_lu_rate_spoken = 0.01\n", "spoken null-LU"),
    ("[paths]\ntrain = [{domain = 1}]\n", "path"),
    ("[experiment]\nseeds = []\n", "seeds"),
    ("seed = = 1\n", "TOML"),
])
def test_config_errors_are_actionable(text, needle):
    with pytest.raises(ConfigError) as info:
        RunConfig.loads(text)
    assert needle in str(info.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "nope.toml")


def test_check_paths(tmp_path):
    cfg = RunConfig.loads(f'[paths]\nlexicon = "{tmp_path / "lex.json"}"\n')
    with pytest.raises(ConfigError, match="file not found"):
        cfg.check_paths("lexicon")
    with pytest.raises(ConfigError, match="required"):
        cfg.check_paths("train")
    (tmp_path / "lex.json").write_text("{}")
    cfg.check_paths("lexicon")


def test_config_hash_tracks_content():
    a, b = RunConfig(), RunConfig.loads("[train]\nepochs = 3\n")
    assert a.hash() != b.hash()


# --- checkpoints ----------------------------------------------------------------

@pytest.fixture
def arrays(rng):
    return {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": np.array(2.5)}


def test_checkpoint_round_trip_is_exact(arrays, tmp_path):
    data = save_checkpoint(tmp_path / "m.ckpt", arrays, "h" * 64, {"epoch": 3})
    params, header = load_checkpoint(tmp_path / "m.ckpt", "h" * 64)
    for k in arrays:
        assert params[k].shape == arrays[k].shape
        assert np.array_equal(params[k], arrays[k])
    assert header["meta"] == {"epoch": 3}
    assert dumps_checkpoint(dict(reversed(list(arrays.items()))), "h" * 64, {"epoch": 3}) == data


def test_checkpoint_hash_mismatch(arrays):
    data = dumps_checkpoint(arrays, "a" * 64)
    with pytest.raises(CheckpointError, match="label space"):
        loads_checkpoint(data, "b" * 64)


@pytest.mark.parametrize("cut", [4, 12, 30, -3])
def test_checkpoint_truncation_is_reported(arrays, cut):
    data = dumps_checkpoint(arrays, "a" * 64)
    with pytest.raises(CheckpointError):
        loads_checkpoint(data[:cut])


def test_checkpoint_garbage_and_trailing_bytes(arrays):
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        loads_checkpoint(b"hello world")
    with pytest.raises(CheckpointError, match="trailing"):
        loads_checkpoint(dumps_checkpoint(arrays, "a") + b"\0")
