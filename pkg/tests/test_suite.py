import pytest
import torch

from modseq.config import ModelConfig
from modseq.errors import ConfigError
from modseq.plans import parse_plan
from modseq.suite import init_suite, resolve_layers
from modseq.transformer import build_model


def test_suite_layout_and_copy_init():
    cfg = ModelConfig(d_model=8, n_heads=2, d_ff=16, vocab_size=9, n_enc=12, n_dec=6, max_len=10)
    teacher = build_model(cfg, seed=0)
    suite = init_suite(teacher)
    assert suite.granularities == {"enc": [2, 3, 4, 6], "dec": [2, 3]}
    assert len(suite.enc) == 15 and len(suite.dec) == 5
    m26 = suite.layer("enc", 2, 6)
    for a, b in zip(m26.parameters(), teacher.enc_layers[11].parameters()):
        assert torch.equal(a, b) and a.data_ptr() != b.data_ptr()
    names = {n for n, _ in suite.named_parameters()}
    assert not any(n.startswith("teacher") for n in names)


def test_prime_depth_rejected():
    cfg = ModelConfig(d_model=8, n_heads=2, d_ff=16, vocab_size=9, n_enc=7, n_dec=6, max_len=10)
    with pytest.raises(ConfigError):
        init_suite(build_model(cfg))


def test_resolve_layers():
    cfg = ModelConfig(d_model=8, n_heads=2, d_ff=16, vocab_size=9, n_enc=6, n_dec=6, max_len=10)
    teacher = build_model(cfg)
    suite = init_suite(teacher)
    layers = resolve_layers("enc", parse_plan("m2.1|t3|m3.2"), teacher, suite)
    assert layers[0] is suite.layer("enc", 2, 1)
    assert layers[1] is teacher.enc_layers[2]
    assert layers[2] is suite.layer("enc", 3, 2)
    with pytest.raises(ConfigError):
        resolve_layers("enc", parse_plan("m2.1|m2.2"), teacher, suite)
