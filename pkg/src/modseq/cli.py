"""Command-line entry point.

    modseq train-teacher --config run.json --out runs/teacher
    modseq train-modular --teacher runs/teacher --out runs/suite [--no-kd] [--no-curriculum]
                         [--inference-configs-only]
    modseq assemble --suite runs/suite --strategy size-first --budget layers=6 [--finetune]
                    --out runs/small
    modseq sweep --suite runs/suite --strategy speed-first --out curve.csv
    modseq bench --checkpoint runs/small --reps 20

Exit codes: 0 ok, 2 configuration error, 3 infeasible budget, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import torch

from .assemble import (Assembly, Budget, CostModel, assembly_parameters, cost_estimate,
                       oracle_search, random_assembly_total, select_by_budget, strategy_sequence)
from .bench import measure_latency
from .checkpoint import (load_any_model, load_suite, load_teacher, save_assembled, save_suite,
                         save_teacher)
from .config import RunConfig, load_run_config
from .data import generate, write_split
from .errors import BudgetInfeasible, ConfigError, InputError, NumericError
from .rng import stream
from .suite import init_suite
from .transformer import build_model
from .train import (evaluate, evaluate_assembly, finetune_assembled, materialize, train_modular,
                    train_teacher, write_history)

log = logging.getLogger("modseq")

SWEEP_COLUMNS = ["strategy", "step", "enc_layers", "dec_layers", "total_layers", "params",
                 "size_ratio", "est_speed_ratio", "measured_ms", "exact_match", "token_acc",
                 "bleu4", "enc_config", "dec_config"]


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _base_config(run_dir):
    p = Path(run_dir) / "resolved_config.json"
    return json.loads(p.read_text()) if p.exists() else None


def _resolve(args, base=None) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None), base)
    return cfg


def _cost_model(cfg: RunConfig) -> CostModel:
    return CostModel(cfg.cost.a, cfg.cost.b, cfg.cost.c, cfg.cost.cached)


def _eval_split(cfg: RunConfig, split: str, limit=None):
    rows = generate(cfg.task)[split]
    return rows[:limit] if limit else rows


# ---------------------------------------------------------------- commands

def cmd_train_teacher(args) -> int:
    cfg = _resolve(args)
    if args.seed is not None:
        cfg.train.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "resolved_config.json", cfg.to_dict())
    data = generate(cfg.task)
    (out / "data").mkdir(exist_ok=True)
    for split, rows in data.items():
        write_split(out / "data" / f"{split}.tsv", rows)
    try:
        model, history = train_teacher(data["train"], cfg.model, cfg.train)
    except NumericError as exc:
        if exc.last_finite_state is not None:
            model = build_model(cfg.model)
            model.load_state_dict(exc.last_finite_state)
            save_teacher(out / "last_finite", model, {"stage": "teacher", "config_hash": cfg.config_hash(),
                                                      "step": exc.step, "aborted": True})
        raise
    save_teacher(out, model, {"stage": "teacher", "config_hash": cfg.config_hash(),
                              "step": cfg.train.total_steps})
    write_history(out / "history.csv", history)
    if data["valid"]:
        metrics = evaluate(model, data["valid"])
        _dump_json(out / "metrics.json", {"valid": metrics})
        log.info("teacher valid metrics: %s", metrics)
    return 0


def cmd_train_modular(args) -> int:
    teacher = load_teacher(args.teacher)
    cfg = _resolve(args, _base_config(args.teacher))
    if cfg.model != teacher.cfg:
        raise ConfigError("config model section does not match the teacher checkpoint")
    m = cfg.modular
    if args.seed is not None:
        m.seed = args.seed
    if args.no_curriculum:
        m.curriculum_enabled = False
    if args.no_kd:
        m.kd_enabled = False
    if args.inference_configs_only:
        m.sampling_mode = "inference-configs-only"
    suite = init_suite(teacher)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "resolved_config.json", cfg.to_dict())
    data = generate(cfg.task)
    try:
        suite, history = train_modular(teacher, suite, data["train"], cfg.schedule, m)
    except NumericError as exc:
        if exc.last_finite_state is not None:
            suite.load_state_dict(exc.last_finite_state)
            save_suite(out / "last_finite", suite, {"stage": "modular", "config_hash": cfg.config_hash(),
                                                    "step": exc.step, "aborted": True})
        raise
    save_suite(out, suite, {"stage": "modular", "config_hash": cfg.config_hash(),
                            "step": m.total_steps})
    write_history(out / "history.csv", history)
    return 0


def cmd_assemble(args) -> int:
    suite = load_suite(args.suite)
    teacher = suite.teacher
    cfg = _resolve(args, _base_config(args.suite))
    if args.seed is not None:
        cfg.modular.seed = args.seed
    budget = Budget.parse(args.budget)
    tc = teacher.cfg
    G = suite.granularities
    cm = _cost_model(cfg)
    extra = {}
    if args.strategy in ("size-first", "speed-first"):
        seq = strategy_sequence(tc.n_enc, tc.n_dec, G["enc"], G["dec"], args.strategy)
        asm = select_by_budget(seq, budget, cm, cfg.cost.src_len, cfg.cost.gen_len)
    elif args.strategy == "random":
        if budget.kind != "layers":
            raise ConfigError("random assembly takes a layers=N budget")
        rng = stream(cfg.modular.seed, "assemble/random")
        asm = random_assembly_total(tc.n_enc, tc.n_dec, G["enc"], G["dec"], int(budget.value), rng)
    elif args.strategy == "oracle":
        valid = _eval_split(cfg, "valid", args.eval_limit)
        scores = {}

        def score(a: Assembly) -> float:
            s = evaluate_assembly(a, teacher, suite, valid)["exact_match"]
            scores[a.key()] = s
            return s

        best = oracle_search(score, tc.n_enc, tc.n_dec, G["enc"], G["dec"])
        extra["oracle"] = {str(L): {"enc": a.strings()[0], "dec": a.strings()[1], "exact_match": s}
                           for L, (a, s) in best.items()}
        extra["oracle_evaluated"] = len(scores)
        feasible = [(s, -L, a) for L, (a, s) in best.items()
                    if select_ok(a, budget, cm, cfg)]
        if not feasible:
            lo = min(best)
            raise BudgetInfeasible(f"budget infeasible, max achievable = {lo}", lo)
        asm = max(feasible, key=lambda t: (t[0], t[1]))[2]
    else:
        raise ConfigError(f"unknown strategy {args.strategy!r}")

    if args.finetune:
        model = finetune_assembled(asm, suite, teacher, generate(cfg.task)["train"], cfg.modular)
    else:
        model = materialize(asm, teacher, suite)
    model.eval()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "resolved_config.json", cfg.to_dict())
    save_assembled(out, model, asm, {"stage": "assembled", "strategy": args.strategy,
                                     "budget": str(budget), "finetuned": bool(args.finetune),
                                     "config_hash": cfg.config_hash()})
    report = cost_estimate(asm, cm, cfg.cost.src_len, cfg.cost.gen_len,
                           params=sum(p.numel() for p in model.parameters()))
    enc_s, dec_s = asm.strings()
    _dump_json(out / "cost_report.json", report.to_dict())
    _dump_json(out / "assembly.json", {"enc": enc_s, "dec": dec_s, "shape": asm.shape,
                                       "provenance": asm.provenance, **extra})
    test = _eval_split(cfg, "test", args.eval_limit)
    if test:
        _dump_json(out / "metrics.json", {"test": evaluate(model, test)})
    print(f"enc: {enc_s}\ndec: {dec_s}\nshape {asm.shape}, size ratio {report.size_ratio:.3f}")
    return 0


def select_ok(asm, budget, cm, cfg) -> bool:
    from .assemble import satisfies

    return satisfies(asm, budget, cm, cfg.cost.src_len, cfg.cost.gen_len)


def cmd_sweep(args) -> int:
    suite = load_suite(args.suite)
    teacher = suite.teacher
    cfg = _resolve(args, _base_config(args.suite))
    tc = teacher.cfg
    G = suite.granularities
    cm = _cost_model(cfg)
    rows_eval = _eval_split(cfg, args.split, args.eval_limit)
    seq = strategy_sequence(tc.n_enc, tc.n_dec, G["enc"], G["dec"], args.strategy)
    srcs = [list(e.src) for e in rows_eval[: args.bench_batch]]
    rows = []
    for step, asm in enumerate(seq):
        metrics = evaluate_assembly(asm, teacher, suite, rows_eval)
        rep = cost_estimate(asm, cm, cfg.cost.src_len, cfg.cost.gen_len, cfg=tc)
        measured = ""
        if args.measure:
            enc_l = suite.resolve("enc", asm.enc)
            dec_l = suite.resolve("dec", asm.dec)
            measured = measure_latency(teacher, srcs, args.reps, enc_layers=enc_l,
                                       dec_layers=dec_l)["median_ms"]
        enc_s, dec_s = asm.strings()
        rows.append({
            "strategy": args.strategy, "step": step, "enc_layers": rep.enc_layers,
            "dec_layers": rep.dec_layers, "total_layers": rep.total_layers,
            "params": assembly_parameters(asm, tc), "size_ratio": rep.size_ratio,
            "est_speed_ratio": rep.est_speed_ratio, "measured_ms": measured,
            "exact_match": metrics["exact_match"], "token_acc": metrics["token_acc"],
            "bleu4": metrics["bleu4"], "enc_config": enc_s, "dec_config": dec_s,
        })
        log.info("step %d %s em=%.4f", step, asm.shape, metrics["exact_match"])
    write_curve(args.out, rows)
    return 0


def write_curve(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_bench(args) -> int:
    if args.reps < 5:
        raise ConfigError("--reps must be >= 5")
    model, meta = load_any_model(args.checkpoint)
    cfg = _resolve(args, _base_config(args.checkpoint))
    cfg.task.n_train = 0
    cfg.task.n_valid = 0
    cfg.task.n_test = max(args.batch, 1)
    srcs = [list(e.src) for e in generate(cfg.task)["test"][: args.batch]]
    stats = measure_latency(model, srcs, args.reps, warmup=args.warmup, gen_len=args.gen_len)
    stats.update(role=meta["role"], enc_layers=len(model.enc_layers),
                 dec_layers=len(model.dec_layers), batch=len(srcs))
    text = json.dumps(stats, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modseq", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train the full teacher model")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("train-modular", help="train the modularized layer suite")
    p.add_argument("--teacher", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-curriculum", action="store_true")
    p.add_argument("--no-kd", action="store_true")
    p.add_argument("--inference-configs-only", action="store_true")
    p.set_defaults(func=cmd_train_modular)

    p = sub.add_parser("assemble", help="assemble a compact model under a budget")
    p.add_argument("--suite", required=True)
    p.add_argument("--strategy", required=True,
                   choices=["size-first", "speed-first", "random", "oracle"])
    p.add_argument("--budget", required=True, help="layers=N | size-ratio=X | speed-ratio=X")
    p.add_argument("--finetune", action="store_true")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-limit", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("sweep", help="evaluate every step of an assembling strategy")
    p.add_argument("--suite", required=True)
    p.add_argument("--strategy", required=True, choices=["size-first", "speed-first"])
    p.add_argument("--config")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--eval-limit", type=int)
    p.add_argument("--measure", action="store_true", help="also time greedy decoding")
    p.add_argument("--reps", type=int, default=7)
    p.add_argument("--bench-batch", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="greedy-decoding latency of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--gen-len", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except BudgetInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
