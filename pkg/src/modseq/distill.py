"""Task loss plus hidden-state and attention distillation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .config import PAD
from .errors import InputError
from .plans import Modular
from .transformer import ForwardTrace


@dataclass(frozen=True)
class AlignedPair:
    stack: str
    position: int  # index of the segment in the hybrid partition
    i: int
    j: int

    @property
    def teacher_index(self) -> int:
        return self.i * self.j


def alignment(segments: Sequence, stack: str = "enc") -> list[AlignedPair]:
    """One pair per modular segment, targeting teacher layer ``t_{i*j}``."""
    return [AlignedPair(stack, pos, s.i, s.j) for pos, s in enumerate(segments)
            if isinstance(s, Modular)]


@dataclass
class LossBreakdown:
    task_ce: float
    hidden_mse: float
    attn_mse: float
    total: float


def task_loss(logits: torch.Tensor, targets: torch.Tensor, smoothing: float = 0.1,
              pad_id: int = PAD) -> torch.Tensor:
    """Label-smoothed cross-entropy averaged over non-pad target positions."""
    if not 0.0 <= smoothing < 1.0:
        raise InputError(f"smoothing {smoothing} outside [0, 1)")
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise InputError("no non-pad target positions")
    logp = F.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    smooth = -logp.mean(dim=-1)
    per_tok = (1.0 - smoothing) * nll + smoothing * smooth
    return (per_tok * keep).sum() / n


def _masked_mse(a, b, mask):
    mask = mask.expand_as(a).to(a.dtype)
    return ((a - b) ** 2 * mask).sum() / mask.sum()


def _attention_masks(trace: ForwardTrace):
    src, tgt = trace.src_keep, trace.tgt_keep
    Lt = tgt.shape[1]
    causal = torch.ones(Lt, Lt, dtype=torch.bool).tril()
    enc_self = (src[:, :, None] & src[:, None, :])[:, None]
    dec_self = (tgt[:, :, None] & tgt[:, None, :] & causal)[:, None]
    cross = (tgt[:, :, None] & src[:, None, :])[:, None]
    return enc_self, dec_self, cross


def distill_losses(hybrid: ForwardTrace, teacher: ForwardTrace,
                   pairs: Sequence[AlignedPair]) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean-over-pairs hidden MSE and attention-probability MSE.

    Padding positions and masked attention entries are excluded.  Decoder
    pairs average their self- and cross-attention terms.
    """
    dtype = hybrid.logits.dtype
    if not pairs:
        zero = torch.zeros((), dtype=dtype)
        return zero, zero
    enc_self, dec_self, cross = _attention_masks(hybrid)
    hid_terms, att_terms = [], []
    for pr in pairs:
        t = pr.teacher_index - 1
        if pr.stack == "enc":
            h, ht = hybrid.enc_hidden[pr.position], teacher.enc_hidden[t]
            a, at = hybrid.enc_attn[pr.position], teacher.enc_attn[t]
            keep = hybrid.src_keep[:, :, None]
        else:
            h, ht = hybrid.dec_hidden[pr.position], teacher.dec_hidden[t]
            a, at = hybrid.dec_attn[pr.position], teacher.dec_attn[t]
            keep = hybrid.tgt_keep[:, :, None]
        if h.shape != ht.shape:
            raise RuntimeError(f"misaligned hidden shapes {tuple(h.shape)} vs {tuple(ht.shape)}")
        hid_terms.append(_masked_mse(h, ht, keep))
        if pr.stack == "enc":
            att_terms.append(_masked_mse(a["self"], at["self"], enc_self))
        else:
            att_terms.append(0.5 * (_masked_mse(a["self"], at["self"], dec_self)
                                    + _masked_mse(a["cross"], at["cross"], cross)))
    return torch.stack(hid_terms).mean(), torch.stack(att_terms).mean()


def total_loss(task_ce, hidden_mse, attn_mse):
    """Equal-weight sum of the task and distillation terms."""
    return task_ce + hidden_mse + attn_mse
