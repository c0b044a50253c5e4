"""Wall-clock latency of greedy decoding."""
from __future__ import annotations

import time

import numpy as np
import torch

from .errors import ConfigError
from .transformer import Seq2Seq, greedy_generate


def measure_latency(model: Seq2Seq, srcs, reps: int = 10, warmup: int = 2,
                    gen_len: int | None = None, enc_layers=None, dec_layers=None) -> dict:
    """Median / IQR milliseconds for one batched greedy decode of ``srcs``.

    Decoding ignores EOS and always runs ``gen_len`` steps so assemblies with
    different weights are timed on identical work.
    """
    if reps < 5:
        raise ConfigError("need at least 5 repetitions")
    torch.set_num_threads(1)
    gen_len = model.cfg.max_len - 1 if gen_len is None else gen_len
    run = lambda: greedy_generate(model, srcs, gen_len, enc_layers, dec_layers, stop_at_eos=False)
    for _ in range(warmup):
        run()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        run()
        samples.append((time.perf_counter() - t0) * 1000.0)
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return {"median_ms": float(med), "q1_ms": float(q1), "q3_ms": float(q3),
            "iqr_ms": float(q3 - q1), "reps": reps, "samples_ms": samples}


def iqr_overlap(a: dict, b: dict) -> bool:
    return a["q1_ms"] <= b["q3_ms"] and b["q1_ms"] <= a["q3_ms"]
