"""Sequence metrics: exact match, token accuracy, corpus BLEU-4 (all in [0, 1])."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence


def exact_match(preds: Sequence[Sequence[int]], refs: Sequence[Sequence[int]]) -> float:
    return sum(list(p) == list(r) for p, r in zip(preds, refs)) / len(refs)


def token_accuracy(preds, refs) -> float:
    """Position-wise matches over the longer of prediction and reference, pooled."""
    hits = total = 0
    for p, r in zip(preds, refs):
        hits += sum(a == b for a, b in zip(p, r))
        total += max(len(p), len(r))
    return hits / total if total else 1.0


def _ngrams(seq, n):
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu4(preds, refs) -> float:
    """Corpus BLEU with uniform weights over 1..4-grams and brevity penalty, unsmoothed."""
    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for p, r in zip(preds, refs):
        p, r = list(p), list(r)
        hyp_len += len(p)
        ref_len += len(r)
        for n in range(1, 5):
            hp, rc = _ngrams(p, n), _ngrams(r, n)
            clipped[n - 1] += sum(min(c, rc[g]) for g, c in hp.items())
            totals[n - 1] += max(len(p) - n + 1, 0)
    if min(clipped) == 0 or hyp_len == 0:
        return 0.0
    log_p = sum(math.log(c / t) for c, t in zip(clipped, totals)) / 4
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def sequence_metrics(preds, refs) -> dict:
    if not refs:
        raise ValueError("empty evaluation split")
    return {
        "exact_match": exact_match(preds, refs),
        "token_acc": token_accuracy(preds, refs),
        "bleu4": bleu4(preds, refs),
    }
