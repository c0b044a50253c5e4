"""Teacher training, modular-suite training, fine-tuning, SFT baseline, evaluation."""
from __future__ import annotations

import copy
import csv
import logging
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .assemble import Assembly, strategy_sequence
from .config import ModelConfig, ScheduleConfig, TrainConfig
from .data import BatchStream, Example
from .distill import LossBreakdown, alignment, distill_losses, task_loss, total_loss
from .errors import ConfigError, InputError, NumericError
from .metrics import sequence_metrics
from .plans import Modular, format_plan
from .rng import stream, torch_generator
from .sampler import ReplaceSchedule, sample_hybrid, schedule_at
from .suite import ModuleSuite, freeze, require_granularities, resolve_layers
from .transformer import Seq2Seq, greedy_generate

log = logging.getLogger(__name__)


def lr_at(step: float, total_steps: int, peak: float, warmup_ratio: float) -> float:
    """Linear warmup to ``peak`` over ``warmup_ratio*T`` steps, then linear decay to 0 at T."""
    T = total_steps
    warm = warmup_ratio * T
    if T <= 0:
        return 0.0
    if step < warm:
        return peak * step / warm
    if T == warm:
        return peak
    return max(0.0, peak * (T - step) / (T - warm))


def _optimizer(params, cfg: TrainConfig):
    return torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.adam_betas,
                            eps=cfg.adam_eps, fused=True)


def _apply_update(opt, params, loss, cfg: TrainConfig, lr: float, step: int, snapshot):
    if not bool(torch.isfinite(loss)):
        raise NumericError(f"non-finite loss at step {step}", last_finite_state=snapshot(), step=step)
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip:
        nn.utils.clip_grad_norm_(params, cfg.grad_clip)
    for group in opt.param_groups:
        group["lr"] = lr
    opt.step()


# ---------------------------------------------------------------- evaluation

@torch.no_grad()
def predict(model: Seq2Seq, examples: Sequence[Example], enc_layers=None, dec_layers=None,
            batch_size: int = 500, max_steps: Optional[int] = None) -> list:
    max_steps = model.cfg.max_len - 1 if max_steps is None else max_steps
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        preds.extend(greedy_generate(model, [list(e.src) for e in chunk], max_steps,
                                     enc_layers, dec_layers))
    return preds


def evaluate(model: Seq2Seq, examples: Sequence[Example], enc_layers=None, dec_layers=None,
             batch_size: int = 500) -> dict:
    """Greedy-decode ``examples`` and score exact match, token accuracy and BLEU-4."""
    if not examples:
        raise InputError("evaluation split is empty")
    was_training = model.training
    model.eval()
    preds = predict(model, examples, enc_layers, dec_layers, batch_size)
    model.train(was_training)
    return sequence_metrics(preds, [list(e.tgt) for e in examples])


def evaluate_assembly(assembly: Assembly, teacher: Seq2Seq, suite: ModuleSuite,
                      examples: Sequence[Example]) -> dict:
    return evaluate(teacher, examples, resolve_layers("enc", assembly.enc, teacher, suite),
                    resolve_layers("dec", assembly.dec, teacher, suite))


# ---------------------------------------------------------------- task-only training

def _fit_task(model: Seq2Seq, train: Sequence[Example], cfg: TrainConfig, steps: int,
              stream_name: str, history: Optional[list] = None):
    params = [p for p in model.parameters() if p.requires_grad]
    opt = _optimizer(params, cfg)
    batches = BatchStream(list(train), cfg.batch_size, cfg.seed, stream_name)
    model.train()
    last_good = {k: v.clone() for k, v in model.state_dict().items()}
    for s in range(steps):
        src, tin, tout = batches.next()
        trace = model(src, tin)
        loss = task_loss(trace.logits, tout, cfg.label_smoothing)
        lr = lr_at(s + 1, steps, cfg.learning_rate, cfg.warmup_ratio)
        _apply_update(opt, params, loss, cfg, lr, s, lambda: last_good)
        if history is not None and (s % cfg.log_every == 0 or s == steps - 1):
            history.append({"step": s, "lr": lr, "task_ce": float(loss.detach())})
        if (s + 1) % 200 == 0:
            last_good = {k: v.clone() for k, v in model.state_dict().items()}
        if (s + 1) % 500 == 0:
            log.info("%s step %d/%d loss %.4f", stream_name, s + 1, steps, float(loss.detach()))
    return model


def train_teacher(train: Sequence[Example], model_cfg: ModelConfig, cfg: TrainConfig,
                  model: Optional[Seq2Seq] = None) -> tuple[Seq2Seq, list]:
    """Train the full model with the task loss only."""
    if not train:
        raise InputError("training set is empty")
    torch.manual_seed(cfg.seed)
    if model is None:
        model = Seq2Seq(model_cfg, generator=torch_generator(cfg.seed, "init"))
    history: list = []
    _fit_task(model, train, cfg, cfg.total_steps, "data/teacher", history)
    model.eval()
    return model, history


# ---------------------------------------------------------------- modular training

def make_schedules(suite: ModuleSuite, sched: ScheduleConfig, cfg: TrainConfig,
                   total_steps: Optional[int] = None) -> dict:
    T = cfg.total_steps if total_steps is None else total_steps
    out = {}
    for st in ("enc", "dec"):
        wps = (sched.waypoints or {}).get(st) if sched.waypoints else None
        out[st] = ReplaceSchedule(T, suite.granularities[st], sched.p0, sched.p_ramp_end, wps,
                                  curriculum=cfg.curriculum_enabled)
    return out


def inference_configs(suite: ModuleSuite) -> list[Assembly]:
    """Union of the size-first and speed-first sequences, first-seen order."""
    t = suite.teacher.cfg
    seen, out = set(), []
    for strat in ("size-first", "speed-first"):
        for asm in strategy_sequence(t.n_enc, t.n_dec, suite.granularities["enc"],
                                     suite.granularities["dec"], strat):
            if asm.key() not in seen:
                seen.add(asm.key())
                out.append(asm)
    return out


def train_modular(teacher: Seq2Seq, suite: ModuleSuite, train: Sequence[Example],
                  sched: ScheduleConfig, cfg: TrainConfig) -> tuple[ModuleSuite, list]:
    """Sample a hybrid per step and update only the modularized layers."""
    if not train:
        raise InputError("training set is empty")
    if cfg.total_steps < 4:
        raise ConfigError("modular training needs total_steps >= 4 so every schedule quarter is nonempty")
    tc = teacher.cfg
    require_granularities(tc.n_enc, "encoder")
    require_granularities(tc.n_dec, "decoder")
    freeze(teacher)
    teacher.eval()
    schedules = make_schedules(suite, sched, cfg)
    rngs = {st: stream(cfg.seed, f"sampler/{st}") for st in ("enc", "dec")}
    pool = inference_configs(suite) if cfg.sampling_mode == "inference-configs-only" else None
    params = list(suite.parameters())
    opt = _optimizer(params, cfg)
    batches = BatchStream(list(train), cfg.batch_size, cfg.seed, "data/modular")
    suite.train()
    history = []
    T = cfg.total_steps
    last_good = {k: v.clone() for k, v in suite.state_dict().items()}
    for s in range(T):
        p, probs = {}, {}
        for st in ("enc", "dec"):
            p[st], probs[st] = schedule_at(schedules[st], s)
        if pool is not None:
            asm = pool[int(rngs["enc"].integers(len(pool)))]
            plans = {"enc": asm.enc, "dec": asm.dec}
        else:
            n = {"enc": tc.n_enc, "dec": tc.n_dec}
            plans = {st: sample_hybrid(n[st], suite.granularities[st], p[st], probs[st], rngs[st],
                                       st, s, f"sampler/{st}").segments for st in ("enc", "dec")}
        src, tin, tout = batches.next()
        layers = {st: resolve_layers(st, plans[st], teacher, suite) for st in ("enc", "dec")}
        hyb = teacher(src, tin, layers["enc"], layers["dec"])
        task = task_loss(hyb.logits, tout, cfg.label_smoothing)
        pairs = alignment(plans["enc"], "enc") + alignment(plans["dec"], "dec")
        if cfg.kd_enabled and pairs:
            with torch.no_grad():
                ref = teacher(src, tin)
            hid, att = distill_losses(hyb, ref, pairs)
        else:
            hid = att = torch.zeros((), dtype=task.dtype)
        loss = total_loss(task, hid, att)
        lr = lr_at(s + 1, T, cfg.learning_rate, cfg.warmup_ratio)
        if pairs:
            _apply_update(opt, params, loss, cfg, lr, s, lambda: last_good)
        elif not bool(torch.isfinite(loss)):
            raise NumericError(f"non-finite loss at step {s}", last_finite_state=last_good, step=s)
        if s % cfg.log_every == 0 or s == T - 1:
            row = {"step": s, "lr": lr, "p_enc": p["enc"], "p_dec": p["dec"]}
            for st in ("enc", "dec"):
                for g, w in zip(suite.granularities[st], probs[st]):
                    row[f"pvec_{st}_g{g}"] = w
            row.update(task_ce=float(task.detach()), hidden_mse=float(hid.detach()),
                       attn_mse=float(att.detach()), total=float(loss.detach()),
                       enc_plan=format_plan(plans["enc"]), dec_plan=format_plan(plans["dec"]))
            history.append(row)
        if (s + 1) % 200 == 0:
            last_good = {k: v.clone() for k, v in suite.state_dict().items()}
        if (s + 1) % 500 == 0:
            log.info("modular step %d/%d loss %.4f enc %s dec %s", s + 1, T, float(loss.detach()),
                     format_plan(plans["enc"]), format_plan(plans["dec"]))
    suite.eval()
    return suite, history


def loss_breakdown(row: dict) -> LossBreakdown:
    return LossBreakdown(row["task_ce"], row["hidden_mse"], row["attn_mse"], row["total"])


# ---------------------------------------------------------------- compact models

def materialize(assembly: Assembly, teacher: Seq2Seq, suite: Optional[ModuleSuite] = None) -> Seq2Seq:
    """Standalone model: copies of the teacher shell and every referenced layer."""
    err = assembly.validate()
    if err:
        raise ConfigError(err)
    model = copy.deepcopy(teacher)
    model.enc_layers = nn.ModuleList(copy.deepcopy(l) for l in
                                     resolve_layers("enc", assembly.enc, teacher, suite))
    model.dec_layers = nn.ModuleList(copy.deepcopy(l) for l in
                                     resolve_layers("dec", assembly.dec, teacher, suite))
    for prm in model.parameters():
        prm.requires_grad_(True)
    return model


def finetune_assembled(assembly: Assembly, suite: ModuleSuite, teacher: Seq2Seq,
                       train: Sequence[Example], cfg: TrainConfig,
                       steps: Optional[int] = None) -> Seq2Seq:
    """Materialize the assembly and fine-tune all of its weights on the task loss."""
    steps = cfg.resolved_finetune_steps if steps is None else steps
    model = materialize(assembly, teacher, suite)
    if steps > 0:
        _fit_task(model, train, cfg, steps, "data/finetune")
    model.eval()
    return model


def sft_layer_indices(n: int, keep: int) -> list[int]:
    """Evenly spaced 1-based layer indices including the first and last."""
    if not 1 <= keep <= n:
        raise ConfigError(f"cannot keep {keep} of {n} layers")
    if keep == 1:
        return [n]
    return [round(1 + (k - 1) * (n - 1) / (keep - 1)) for k in range(1, keep + 1)]


def shrink(teacher: Seq2Seq, enc_keep: int, dec_keep: int) -> Seq2Seq:
    model = copy.deepcopy(teacher)
    model.enc_layers = nn.ModuleList(copy.deepcopy(teacher.enc_layers[k - 1])
                                     for k in sft_layer_indices(teacher.cfg.n_enc, enc_keep))
    model.dec_layers = nn.ModuleList(copy.deepcopy(teacher.dec_layers[k - 1])
                                     for k in sft_layer_indices(teacher.cfg.n_dec, dec_keep))
    for prm in model.parameters():
        prm.requires_grad_(True)
    return model


def train_sft_baseline(teacher: Seq2Seq, enc_keep: int, dec_keep: int,
                       train: Sequence[Example], cfg: TrainConfig,
                       steps: Optional[int] = None) -> Seq2Seq:
    """Shrink-and-fine-tune: keep evenly spaced teacher layers, then train on the task."""
    steps = cfg.total_steps if steps is None else steps
    model = shrink(teacher, enc_keep, dec_keep)
    if steps > 0:
        _fit_task(model, train, cfg, steps, "data/sft")
    model.eval()
    return model


# ---------------------------------------------------------------- history files

def write_history(path, rows: list):
    if not rows:
        open(path, "w").close()
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
