"""Central finite-difference gradient check for the toy seq2seq model (float64)."""
import numpy as np
import torch
from torch.func import functional_call, vmap

from modseq.config import BOS, EOS, PAD, ModelConfig
from modseq.distill import alignment, distill_losses, task_loss, total_loss
from modseq.plans import Original
from modseq.sampler import sample_hybrid
from modseq.suite import init_suite, resolve_layers
from modseq.transformer import build_model


def _random_batch(rng, cfg, B):
    srcs, tgts = [], []
    for _ in range(B):
        ls = int(rng.integers(1, cfg.max_len - 1))
        lt = int(rng.integers(1, cfg.max_len - 1))
        srcs.append([BOS, *rng.integers(3, cfg.vocab_size, size=ls).tolist(), EOS])
        tgts.append([BOS, *rng.integers(3, cfg.vocab_size, size=lt).tolist(), EOS])

    def pad(rows):
        w = max(map(len, rows))
        return torch.tensor([r + [PAD] * (w - len(r)) for r in rows])

    tgt = pad(tgts)
    return pad(srcs), tgt[:, :-1], tgt[:, 1:]


class _Objective(torch.nn.ModuleDict):
    fn = None

    def forward(self):
        return self.fn(self)


def make_case(seed):
    """Random model, batch and hybrid plan.

    Returns ``(module, params, loss_of)`` where ``loss_of(params)`` evaluates
    the training objective functionally so perturbations can be batched.
    """
    rng = np.random.default_rng(seed)
    # even seeds: plain 2-layer stacks (task loss only); odd seeds: 4-layer
    # stacks so a granularity-2 block and the distillation terms take part
    depth = 2 if seed % 2 == 0 else 4
    cfg = ModelConfig(d_model=8, n_heads=int(rng.choice([1, 2, 4])), d_ff=int(rng.choice([8, 16])),
                      vocab_size=7, n_enc=depth, n_dec=depth, max_len=6, dtype="f64")
    teacher = build_model(cfg, seed=seed)
    suite = init_suite(teacher, [2], [2]) if depth == 4 else None
    holder = _Objective({"teacher": teacher})
    if suite is not None:
        holder["suite"] = suite
        with torch.no_grad():
            for p in suite.parameters():
                p.add_(0.1 * torch.randn(p.shape, dtype=p.dtype,
                                         generator=torch.Generator().manual_seed(seed)))
    src, tin, tout = _random_batch(rng, cfg, int(rng.integers(1, 4)))
    p = float(rng.choice([0.0, 0.5, 1.0]))
    if suite is not None:
        plans = {st: sample_hybrid(depth, [2], p, [1.0], rng).segments for st in ("enc", "dec")}
    else:
        plans = {st: [Original(k) for k in range(1, depth + 1)] for st in ("enc", "dec")}
    eps = float(rng.choice([0.0, 0.1]))
    with torch.no_grad():
        ref = teacher(src, tin)
    pairs = alignment(plans["enc"], "enc") + alignment(plans["dec"], "dec")

    def forward_loss(mod):
        t = mod["teacher"]
        s = mod["suite"] if "suite" in mod else None
        layers = {st: resolve_layers(st, plans[st], t, s) for st in ("enc", "dec")}
        hyb = t(src, tin, layers["enc"], layers["dec"])
        task = task_loss(hyb.logits, tout, eps)
        hid, att = distill_losses(hyb, ref, pairs)
        return total_loss(task, hid, att)

    holder.fn = forward_loss
    params = {k: v.detach() for k, v in holder.named_parameters()}
    return holder, params, forward_loss


def _perturbed_losses(holder, params, forward_loss, name, deltas):
    """Loss for each row of ``deltas`` (N, *shape) added to parameter ``name``."""
    base = {k: v for k, v in params.items() if k != name}

    def one(d):
        return functional_call(holder, {**base, name: params[name] + d}, ())

    return vmap(one)(deltas)


def check_case(seed, h=1e-3, chunk=512):
    """Worst per-tensor relative error ``||g - fd|| / max(||g||, ||fd||)``.

    ``fd`` is the Richardson combination (4 D(h/2) - D(h)) / 3 of two central
    differences, which cancels their O(h^2) truncation term.
    """
    holder, params, forward_loss = make_case(seed)
    live = dict(holder.named_parameters())
    loss = forward_loss(holder)
    names = list(live)
    grads = torch.autograd.grad(loss, [live[n] for n in names], allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for name, g in zip(names, grads):
            p = params[name]
            g = torch.zeros_like(p) if g is None else g
            n = p.numel()
            fd = torch.empty(n, dtype=p.dtype)
            eye = torch.eye(n, dtype=p.dtype)
            for lo in range(0, n, chunk):
                basis = eye[lo:lo + chunk].reshape(-1, *p.shape)
                d = {}
                for step in (h, h / 2):
                    up = _perturbed_losses(holder, params, forward_loss, name, step * basis)
                    down = _perturbed_losses(holder, params, forward_loss, name, -step * basis)
                    d[step] = (up - down) / (2 * step)
                fd[lo:lo + chunk] = (4 * d[h / 2] - d[h]) / 3
            fd = fd.view_as(p)
            denom = max(float(g.norm()), float(fd.norm()))
            if denom < 1e-10:
                continue
            worst = max(worst, float((g - fd).norm()) / denom)
    return worst
