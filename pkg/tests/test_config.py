import json

import pytest

from modseq.config import ModelConfig, RunConfig, TrainConfig, load_run_config, run_config_from_dict
from modseq.errors import ConfigError


def test_defaults():
    cfg = run_config_from_dict({})
    assert cfg.train.warmup_ratio == 0.05 and cfg.train.label_smoothing == 0.1
    assert cfg.train.adam_betas == (0.9, 0.999) and cfg.train.adam_eps == 1e-8
    assert cfg.modular.total_steps == 20000
    assert cfg.model.d_model == 32 and cfg.model.n_heads == 2
    assert cfg.task.vocab_size == 16 and (cfg.task.len_min, cfg.task.len_max) == (4, 12)
    assert cfg.modular.resolved_finetune_steps == 2500


@pytest.mark.parametrize("bad", [
    {"bogus": {}},
    {"model": {"d_modle": 3}},
    {"model": {"d_model": 30, "n_heads": 4}},
    {"model": "big"},
    {"train": {"warmup_ratio": 1.0}},
    {"train": {"sampling_mode": "sometimes"}},
    {"task": {"kind": "add"}},
    {"task": {"len_max": 15}},
    {"model": {"vocab_size": 10}},
    {"schedule": {"p0": 2}},
])
def test_rejects(bad):
    with pytest.raises(ConfigError):
        run_config_from_dict(bad)


def test_round_trip_and_hash(tmp_path):
    cfg = run_config_from_dict({"model": {"n_enc": 4}, "train": {"seed": 3}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    again = load_run_config(path)
    assert again == cfg and again.config_hash() == cfg.config_hash()
    assert run_config_from_dict({}).config_hash() != cfg.config_hash()


def test_base_overlay(tmp_path):
    base = run_config_from_dict({"task": {"kind": "sort"}}).to_dict()
    path = tmp_path / "o.json"
    path.write_text(json.dumps({"modular": {"total_steps": 8}}))
    cfg = load_run_config(path, base)
    assert cfg.task.kind == "sort" and cfg.modular.total_steps == 8


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(path)
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")
