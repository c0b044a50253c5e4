import json

import numpy as np
import pytest
import torch

from modseq.assemble import strategy_sequence
from modseq.checkpoint import (load_any_model, load_suite, load_teacher, read_checkpoint,
                               save_assembled, save_suite, save_teacher)
from modseq.config import ModelConfig
from modseq.errors import ConfigError
from modseq.suite import init_suite
from modseq.train import materialize
from modseq.transformer import build_model

CFG = ModelConfig(d_model=8, n_heads=2, d_ff=16, vocab_size=9, n_enc=4, n_dec=4, max_len=10)


def test_teacher_round_trip(tmp_path):
    model = build_model(CFG, seed=1)
    save_teacher(tmp_path, model, {"step": 5})
    meta, tensors = read_checkpoint(tmp_path)
    assert meta["role"] == "teacher" and meta["provenance"] == {"step": 5}
    offsets = [p["offset"] for p in meta["params"]]
    sizes = [p["nbytes"] for p in meta["params"]]
    assert offsets == list(np.cumsum([0] + sizes[:-1]))
    assert sum(sizes) == (tmp_path / "weights.bin").stat().st_size
    back = load_teacher(tmp_path)
    for (n, a), (m, b) in zip(model.state_dict().items(), back.state_dict().items()):
        assert n == m and torch.equal(a, b)


def test_weights_are_little_endian_f32(tmp_path):
    model = build_model(CFG, seed=1)
    save_teacher(tmp_path, model)
    meta = json.loads((tmp_path / "manifest.json").read_text())
    first = meta["params"][0]
    raw = np.frombuffer((tmp_path / "weights.bin").read_bytes(), dtype="<f4",
                        count=int(np.prod(first["shape"])))
    ref = model.state_dict()[first["name"]].numpy().ravel()
    assert np.array_equal(raw, ref)


def test_suite_and_assembled_round_trip(tmp_path):
    teacher = build_model(CFG, seed=2)
    suite = init_suite(teacher)
    with torch.no_grad():
        for p in suite.parameters():
            p.add_(1.0)
    save_suite(tmp_path / "s", suite)
    back = load_suite(tmp_path / "s")
    assert back.granularities == suite.granularities
    for (n, a), (m, b) in zip(suite.state_dict().items(), back.state_dict().items()):
        assert n == m and torch.equal(a, b)
    asm = strategy_sequence(4, 4, [2], [2], "size-first")[-1]
    model = materialize(asm, back.teacher, back)
    save_assembled(tmp_path / "a", model, asm)
    loaded, meta = load_any_model(tmp_path / "a")
    assert meta["extra"]["assembly"]["enc"] == "m2.1|m2.2"
    assert len(loaded.enc_layers) == 2 and len(loaded.dec_layers) == 2
    src = torch.tensor([[1, 3, 4, 2]])
    tin = torch.tensor([[1, 3]])
    assert torch.equal(loaded(src, tin).logits, model(src, tin).logits)


def test_corrupt_checkpoint(tmp_path):
    save_teacher(tmp_path, build_model(CFG))
    blob = (tmp_path / "weights.bin").read_bytes()
    (tmp_path / "weights.bin").write_bytes(blob[:-4])
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path)
    with pytest.raises(ConfigError):
        read_checkpoint(tmp_path / "nowhere")


def test_role_mismatch(tmp_path):
    save_teacher(tmp_path, build_model(CFG))
    with pytest.raises(ConfigError):
        load_suite(tmp_path)
