"""Small pre-norm encoder-decoder transformer with per-layer taps.

The same layer classes serve as teacher layers, modularized layers and the
layers of an assembled compact model; :meth:`Seq2Seq.forward` accepts
arbitrary ordered layer lists so a hybrid model is just a different list.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .config import BOS, EOS, PAD, ModelConfig
from .errors import ConfigError, InputError, NumericError

DTYPES = {"f32": torch.float32, "f64": torch.float64}


def _param(shape, std, generator, dtype):
    return nn.Parameter(torch.randn(*shape, generator=generator, dtype=dtype) * std)


class LayerNorm(nn.Module):
    def __init__(self, d, dtype=torch.float32):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(d, dtype=dtype))
        self.shift = nn.Parameter(torch.zeros(d, dtype=dtype))

    def forward(self, x):
        return F.layer_norm(x, x.shape[-1:], self.scale, self.shift, eps=1e-5)


class Attention(nn.Module):
    """Multi-head attention returning both output and probabilities."""

    def __init__(self, d_model, n_heads, generator=None, dtype=torch.float32):
        super().__init__()
        self.n_heads = n_heads
        std = d_model ** -0.5
        self.q = _param((d_model, d_model), std, generator, dtype)
        self.k = _param((d_model, d_model), std, generator, dtype)
        self.v = _param((d_model, d_model), std, generator, dtype)
        self.o = _param((d_model, d_model), std, generator, dtype)

    def forward(self, x, kv, bias):
        # bias: additive mask (0 / -inf) of shape (B*H, Lq, Lk)
        B, Lq, D = x.shape
        Lk = kv.shape[1]
        H = self.n_heads
        dh = D // H
        q = (x @ self.q).view(B, Lq, H, dh).transpose(1, 2).reshape(B * H, Lq, dh)
        k = (kv @ self.k).view(B, Lk, H, dh).permute(0, 2, 3, 1).reshape(B * H, dh, Lk)
        v = (kv @ self.v).view(B, Lk, H, dh).transpose(1, 2).reshape(B * H, Lk, dh)
        scores = torch.baddbmm(bias, q, k, alpha=1.0 / math.sqrt(dh))
        scores = scores - scores.amax(dim=-1, keepdim=True).detach()
        e = scores.exp()
        probs = e / e.sum(dim=-1, keepdim=True)
        out = torch.bmm(probs, v).view(B, H, Lq, dh).transpose(1, 2).reshape(B, Lq, D)
        return out @ self.o, probs.view(B, H, Lq, Lk)


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff, generator=None, dtype=torch.float32):
        super().__init__()
        self.w1 = _param((d_model, d_ff), d_model ** -0.5, generator, dtype)
        self.w2 = _param((d_ff, d_model), d_ff ** -0.5, generator, dtype)

    def forward(self, x):
        return F.gelu(x @ self.w1) @ self.w2


@dataclass
class LayerContext:
    """Additive attention masks and encoder memory shared by one forward pass."""
    self_bias: torch.Tensor
    memory: Optional[torch.Tensor] = None
    cross_bias: Optional[torch.Tensor] = None


def mask_bias(keep: torch.Tensor, n_heads: int, dtype) -> torch.Tensor:
    """(B, Lq, Lk) bool keep-mask -> (B*H, Lq, Lk) additive 0/-inf bias."""
    B, Lq, Lk = keep.shape
    bias = torch.zeros(B, Lq, Lk, dtype=dtype).masked_fill(~keep, float("-inf"))
    return bias.repeat_interleave(n_heads, dim=0)


class EncoderLayer(nn.Module):
    kind = "enc"

    def __init__(self, cfg: ModelConfig, generator=None):
        super().__init__()
        dt = DTYPES[cfg.dtype]
        self.d_model = cfg.d_model
        self.ln1 = LayerNorm(cfg.d_model, dt)
        self.attn = Attention(cfg.d_model, cfg.n_heads, generator, dt)
        self.ln2 = LayerNorm(cfg.d_model, dt)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, generator, dt)

    def forward(self, x, ctx: LayerContext):
        if x.shape[-1] != self.d_model:
            raise ConfigError(f"layer expects width {self.d_model}, got {x.shape[-1]}")
        n1 = self.ln1(x)
        a, p_self = self.attn(n1, n1, ctx.self_bias)
        h = x + a
        return h + self.ff(self.ln2(h)), {"self": p_self}


class DecoderLayer(nn.Module):
    kind = "dec"

    def __init__(self, cfg: ModelConfig, generator=None):
        super().__init__()
        dt = DTYPES[cfg.dtype]
        self.d_model = cfg.d_model
        self.ln1 = LayerNorm(cfg.d_model, dt)
        self.attn = Attention(cfg.d_model, cfg.n_heads, generator, dt)
        self.ln2 = LayerNorm(cfg.d_model, dt)
        self.cross = Attention(cfg.d_model, cfg.n_heads, generator, dt)
        self.ln3 = LayerNorm(cfg.d_model, dt)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, generator, dt)

    def forward(self, x, ctx: LayerContext):
        if x.shape[-1] != self.d_model:
            raise ConfigError(f"layer expects width {self.d_model}, got {x.shape[-1]}")
        if ctx.memory is None:
            raise ConfigError("decoder layer needs encoder memory")
        n1 = self.ln1(x)
        a, p_self = self.attn(n1, n1, ctx.self_bias)
        h = x + a
        c, p_cross = self.cross(self.ln2(h), ctx.memory, ctx.cross_bias)
        h = h + c
        return h + self.ff(self.ln3(h)), {"self": p_self, "cross": p_cross}


def layer_forward(layer, x, ctx: LayerContext):
    """Run one layer; returns ``(output, attention maps)``."""
    return layer(x, ctx)


@dataclass
class ForwardTrace:
    enc_hidden: list = field(default_factory=list)
    enc_attn: list = field(default_factory=list)
    dec_hidden: list = field(default_factory=list)
    dec_attn: list = field(default_factory=list)
    logits: Optional[torch.Tensor] = None
    src_keep: Optional[torch.Tensor] = None  # (B, Ls) non-pad
    tgt_keep: Optional[torch.Tensor] = None  # (B, Lt) non-pad


class Seq2Seq(nn.Module):
    """Token/position embeddings, final norms and output head plus default layers.

    Source and target share the token embedding; the output projection is
    untied.
    """

    def __init__(self, cfg: ModelConfig, generator=None, n_enc=None, n_dec=None):
        super().__init__()
        self.cfg = cfg
        dt = DTYPES[cfg.dtype]
        d = cfg.d_model
        self.embed = _param((cfg.vocab_size, d), d ** -0.5, generator, dt)
        self.pos = _param((cfg.max_len, d), d ** -0.5, generator, dt)
        self.enc_norm = LayerNorm(d, dt)
        self.dec_norm = LayerNorm(d, dt)
        self.head = _param((d, cfg.vocab_size), d ** -0.5, generator, dt)
        n_enc = cfg.n_enc if n_enc is None else n_enc
        n_dec = cfg.n_dec if n_dec is None else n_dec
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg, generator) for _ in range(n_enc))
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg, generator) for _ in range(n_dec))

    # shell = everything except the layer stacks
    def shell_parameters(self):
        for name, p in self.named_parameters():
            if not name.startswith(("enc_layers.", "dec_layers.")):
                yield name, p

    def _check_tokens(self, t: torch.Tensor, what: str):
        if t.dim() != 2 or t.shape[1] == 0 or t.shape[0] == 0:
            raise InputError(f"{what}: empty sequence")
        if t.shape[1] > self.cfg.max_len:
            raise InputError(f"{what}: length {t.shape[1]} exceeds max_len {self.cfg.max_len}")
        if int(t.min()) < 0 or int(t.max()) >= self.cfg.vocab_size:
            raise InputError(f"{what}: token id outside [0, {self.cfg.vocab_size})")

    def _bias(self, keep):
        return mask_bias(keep, self.cfg.n_heads, self.embed.dtype)

    def _embed(self, tokens):
        L = tokens.shape[1]
        return self.embed[tokens] + self.pos[:L]

    def encode(self, src, layers=None, trace: Optional[ForwardTrace] = None):
        layers = self.enc_layers if layers is None else layers
        src_keep = src != PAD
        Ls = src.shape[1]
        ctx = LayerContext(self_bias=self._bias(src_keep[:, None, :].expand(-1, Ls, Ls)))
        x = self._embed(src)
        for layer in layers:
            x, attn = layer(x, ctx)
            if trace is not None:
                trace.enc_hidden.append(x)
                trace.enc_attn.append(attn)
        return self.enc_norm(x), src_keep

    def decode(self, tgt_in, memory, src_keep, layers=None, trace: Optional[ForwardTrace] = None):
        layers = self.dec_layers if layers is None else layers
        Lt = tgt_in.shape[1]
        causal = torch.ones(Lt, Lt, dtype=torch.bool).tril()
        tgt_keep = tgt_in != PAD
        Ls = src_keep.shape[1]
        ctx = LayerContext(
            self_bias=self._bias(causal[None] & tgt_keep[:, None, :]),
            memory=memory,
            cross_bias=self._bias(src_keep[:, None, :].expand(-1, Lt, Ls)),
        )
        x = self._embed(tgt_in)
        for layer in layers:
            x, attn = layer(x, ctx)
            if trace is not None:
                trace.dec_hidden.append(x)
                trace.dec_attn.append(attn)
        return self.dec_norm(x) @ self.head

    def forward(self, src, tgt_in, enc_layers=None, dec_layers=None) -> ForwardTrace:
        """Teacher-forced forward over explicit layer lists, recording every layer."""
        self._check_tokens(src, "src")
        self._check_tokens(tgt_in, "tgt")
        trace = ForwardTrace()
        memory, src_keep = self.encode(src, enc_layers, trace)
        trace.logits = self.decode(tgt_in, memory, src_keep, dec_layers, trace)
        trace.src_keep = src_keep
        trace.tgt_keep = tgt_in != PAD
        return trace


def seq2seq_forward(model: Seq2Seq, src, tgt_in, enc_layers=None, dec_layers=None) -> ForwardTrace:
    return model(src, tgt_in, enc_layers, dec_layers)


def pad_batch(seqs: Sequence[Sequence[int]], pad=PAD) -> torch.Tensor:
    if not seqs:
        raise InputError("empty batch")
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), pad, dtype=torch.long)
    for r, s in enumerate(seqs):
        out[r, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
    return out


@torch.no_grad()
def greedy_generate(model: Seq2Seq, srcs, max_steps, enc_layers=None, dec_layers=None,
                    stop_at_eos=True):
    """Greedy autoregressive decoding of a batch of payload sequences.

    ``srcs`` holds payload token lists (BOS/EOS are added here).  Returns one
    payload list per source, truncated at the first EOS.  With
    ``stop_at_eos=False`` every row decodes exactly ``max_steps`` tokens,
    which is what the latency benchmark wants.
    """
    single = len(srcs) > 0 and isinstance(srcs[0], int)
    if single:
        srcs = [srcs]
    if any(len(s) == 0 for s in srcs):
        raise InputError("src must be nonempty")
    src = pad_batch([[BOS, *s, EOS] for s in srcs])
    model._check_tokens(src, "src")
    max_steps = min(int(max_steps), model.cfg.max_len - 1)
    B = src.shape[0]
    out = torch.full((B, 1), BOS, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    if max_steps > 0:
        memory, src_keep = model.encode(src, enc_layers)
        for _ in range(max_steps):
            logits = model.decode(out, memory, src_keep, dec_layers)
            nxt = logits[:, -1].argmax(-1)
            nxt = torch.where(done, torch.full_like(nxt, PAD), nxt)
            out = torch.cat([out, nxt[:, None]], dim=1)
            done |= nxt == EOS
            if stop_at_eos and bool(done.all()):
                break
    results = []
    for row in out[:, 1:].tolist():
        toks = []
        for t in row:
            if t in (EOS, PAD):
                break
            toks.append(t)
        results.append(toks)
    return results[0] if single else results


def backward(loss: torch.Tensor, params: dict) -> dict:
    """Reverse-mode gradients of ``loss`` for every trainable entry of ``params``.

    Parameters with ``requires_grad=False`` (a frozen teacher) are omitted;
    parameters the loss does not touch get an explicit zero gradient.
    """
    if loss.dim() != 0:
        raise InputError("loss must be a scalar")
    if not bool(torch.isfinite(loss)):
        raise NumericError(f"non-finite loss {float(loss.detach())}")
    names = [n for n, p in params.items() if p.requires_grad]
    if not names:
        return {}
    grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True,
                                retain_graph=True)
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


def build_model(cfg: ModelConfig, seed: int = 0) -> Seq2Seq:
    from .rng import torch_generator

    return Seq2Seq(cfg, generator=torch_generator(seed, "init"))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
