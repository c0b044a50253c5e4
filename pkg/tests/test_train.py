import dataclasses

import pytest
import torch

import modseq.train as train_mod
from modseq.assemble import Assembly, assembly_parameters, strategy_sequence
from modseq.config import ModelConfig, ScheduleConfig, TaskSpec, TrainConfig
from modseq.data import generate
from modseq.errors import ConfigError, NumericError
from modseq.plans import format_plan
from modseq.suite import init_suite
from modseq.train import (evaluate, evaluate_assembly, finetune_assembled, inference_configs, lr_at,
                          materialize, read_history, sft_layer_indices, shrink, train_modular,
                          train_sft_baseline, train_teacher, write_history)
from modseq.transformer import build_model, count_parameters

CFG = ModelConfig(d_model=16, n_heads=2, d_ff=32, vocab_size=9, n_enc=4, n_dec=4, max_len=10)
TASK = TaskSpec(kind="copy", vocab_size=6, len_min=2, len_max=5, n_train=400, n_valid=60, n_test=60)


@pytest.fixture(scope="module")
def data():
    return generate(TASK)


@pytest.fixture(scope="module")
def teacher(data):
    model, _ = train_teacher(data["train"], CFG, TrainConfig(total_steps=150, batch_size=32, seed=0))
    return model


def test_lr_schedule_knots():
    T, peak, w = 200, 1e-3, 0.05
    assert lr_at(0, T, peak, w) == 0.0
    assert lr_at(10, T, peak, w) == peak
    assert lr_at(T, T, peak, w) == 0.0
    assert abs(lr_at(5, T, peak, w) - peak / 2) < 1e-15
    assert abs(lr_at(105, T, peak, w) - peak / 2) < 1e-15
    assert lr_at(0, T, peak, 0.0) == peak


def test_zero_steps_is_untrained(data):
    model, hist = train_teacher(data["train"], CFG, TrainConfig(total_steps=0, seed=4))
    fresh = build_model(CFG, seed=4)
    assert hist == []
    assert all(torch.equal(a, b) for a, b in zip(model.parameters(), fresh.parameters()))
    assert evaluate(model, data["valid"])["exact_match"] < 0.05


def test_teacher_determinism(data):
    cfg = TrainConfig(total_steps=20, batch_size=16, seed=9)
    a, ha = train_teacher(data["train"], CFG, cfg)
    b, hb = train_teacher(data["train"], CFG, cfg)
    assert ha == hb
    assert all(torch.equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def _mod_cfg(**kw):
    return dataclasses.replace(TrainConfig(total_steps=40, batch_size=16, learning_rate=1e-3, seed=1), **kw)


def test_modular_freezes_teacher_and_updates_suite(teacher, data):
    before = {k: v.clone() for k, v in teacher.state_dict().items()}
    suite = init_suite(teacher)
    init = {k: v.clone() for k, v in suite.state_dict().items()}
    suite, hist = train_modular(teacher, suite, data["train"], ScheduleConfig(), _mod_cfg())
    for k, v in teacher.state_dict().items():
        assert torch.equal(v, before[k])
        assert v.numpy().tobytes() == before[k].numpy().tobytes()
    assert any(not torch.equal(v, init[k]) for k, v in suite.state_dict().items())
    assert len(hist) == 40
    assert {"step", "lr", "p_enc", "p_dec", "pvec_enc_g2", "task_ce", "hidden_mse", "attn_mse",
            "total", "enc_plan", "dec_plan"} <= set(hist[0])
    assert hist[0]["p_enc"] == 0.5 and hist[-1]["p_enc"] == 1.0


def test_no_kd_has_zero_distill(teacher, data):
    _, hist = train_modular(teacher, init_suite(teacher), data["train"], ScheduleConfig(),
                            _mod_cfg(kd_enabled=False))
    assert all(r["hidden_mse"] == 0.0 and r["attn_mse"] == 0.0 for r in hist)


def test_no_curriculum_uniform(teacher, data):
    cfg = ModelConfig(**{**dataclasses.asdict(CFG), "n_enc": 6, "n_dec": 6})
    t6 = build_model(cfg, seed=0)
    _, hist = train_modular(t6, init_suite(t6), data["train"], ScheduleConfig(),
                            _mod_cfg(curriculum_enabled=False, total_steps=8))
    assert all(r["pvec_enc_g2"] == 0.5 and r["pvec_dec_g3"] == 0.5 for r in hist)


def test_inference_configs_only(teacher, data):
    suite = init_suite(teacher)
    pool = {a.key() for a in inference_configs(suite)}
    _, hist = train_modular(teacher, suite, data["train"], ScheduleConfig(),
                            _mod_cfg(sampling_mode="inference-configs-only"))
    assert all((r["enc_plan"], r["dec_plan"]) in pool for r in hist)


def test_modular_same_seed_same_suite(teacher, data):
    a, ha = train_modular(teacher, init_suite(teacher), data["train"], ScheduleConfig(), _mod_cfg(total_steps=10))
    b, hb = train_modular(teacher, init_suite(teacher), data["train"], ScheduleConfig(), _mod_cfg(total_steps=10))
    assert ha == hb
    assert all(torch.equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def test_modular_errors(teacher, data):
    with pytest.raises(ConfigError):
        train_modular(teacher, init_suite(teacher), data["train"], ScheduleConfig(), _mod_cfg(total_steps=3))


def test_nan_loss_aborts_with_last_state(teacher, data, monkeypatch):
    real = train_mod.task_loss

    def poisoned(logits, targets, smoothing=0.1):
        return real(logits, targets, smoothing) * float("nan")

    monkeypatch.setattr(train_mod, "task_loss", poisoned)
    with pytest.raises(NumericError) as exc:
        train_teacher(data["train"], CFG, TrainConfig(total_steps=5, seed=0))
    assert exc.value.step == 0 and exc.value.last_finite_state is not None


def test_materialize_zero_finetune_matches_hybrid(teacher, data):
    suite = init_suite(teacher)
    with torch.no_grad():
        for p in suite.parameters():
            p.add_(0.05)
    asm = strategy_sequence(4, 4, [2], [2], "size-first")[3]
    model = finetune_assembled(asm, suite, teacher, data["train"], _mod_cfg(), steps=0)
    rows = data["valid"][:20]
    src = torch.tensor([[1, 3, 4, 2]])
    tin = torch.tensor([[1, 3, 4]])
    hyb = teacher(src, tin, suite.resolve("enc", asm.enc), suite.resolve("dec", asm.dec)).logits
    assert torch.equal(model(src, tin).logits, hyb)
    assert evaluate(model, rows) == evaluate_assembly(asm, teacher, suite, rows)
    assert count_parameters(model) == assembly_parameters(asm, CFG)


def test_finetune_does_not_hurt_train_metric(teacher, data):
    suite = init_suite(teacher)
    asm = strategy_sequence(4, 4, [2], [2], "size-first")[-1]
    sub = data["train"][:200]
    before = evaluate(materialize(asm, teacher, suite), sub)["exact_match"]
    after = evaluate(finetune_assembled(asm, suite, teacher, data["train"], _mod_cfg(), steps=60), sub)
    assert after["exact_match"] >= before - 0.01


def test_sft_indices():
    assert sft_layer_indices(12, 3) == [1, 6, 12]
    assert sft_layer_indices(6, 3) == [1, 4, 6]
    assert sft_layer_indices(6, 6) == [1, 2, 3, 4, 5, 6]
    assert sft_layer_indices(6, 1) == [6]
    with pytest.raises(ConfigError):
        sft_layer_indices(6, 0)


def test_sft_keep_all_is_teacher_shape(teacher, data):
    model = shrink(teacher, 4, 4)
    assert [p.shape for p in model.parameters()] == [p.shape for p in teacher.parameters()]
    small = train_sft_baseline(teacher, 2, 2, data["train"], _mod_cfg(), steps=5)
    assert len(small.enc_layers) == 2 and len(small.dec_layers) == 2


def test_history_round_trip(tmp_path):
    rows = [{"step": 0, "lr": 0.1, "enc_plan": "t1|m2.1"}, {"step": 1, "lr": 1 / 3, "enc_plan": "t1"}]
    write_history(tmp_path / "h.csv", rows)
    back = read_history(tmp_path / "h.csv")
    assert float(back[1]["lr"]) == 1 / 3 and back[0]["enc_plan"] == "t1|m2.1"
