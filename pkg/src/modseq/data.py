"""Synthetic seq2seq tasks (copy / reverse / sort) with disjoint splits."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .config import BOS, EOS, NUM_SPECIAL, TaskSpec
from .errors import InputError
from .rng import stream
from .transformer import pad_batch


@dataclass(frozen=True)
class Example:
    src: tuple
    tgt: tuple


def transform(kind: str, src) -> tuple:
    if kind == "copy":
        return tuple(src)
    if kind == "reverse":
        return tuple(reversed(src))
    if kind == "sort":
        return tuple(sorted(src))
    raise InputError(f"unknown task {kind!r}")


def generate(spec: TaskSpec) -> dict[str, list[Example]]:
    """Deterministic train/valid/test splits; no source appears twice anywhere."""
    V = spec.vocab_size
    lengths = range(spec.len_min, spec.len_max + 1)
    capacity = sum(V ** L for L in lengths)
    wanted = spec.n_train + spec.n_valid + spec.n_test
    if wanted > capacity:
        raise InputError(
            f"cannot draw {wanted} distinct sources from vocab {V}, lengths "
            f"{spec.len_min}-{spec.len_max} (only {capacity} exist)")
    seen: set = set()
    out = {}
    # test/valid first so their sizes are always met exactly
    for split, count in (("test", spec.n_test), ("valid", spec.n_valid), ("train", spec.n_train)):
        rng = stream(spec.seed, f"data/{split}")
        rows = []
        attempts = 0
        while len(rows) < count:
            attempts += 1
            if attempts > 100 * count + 1000:
                raise InputError(f"could not draw {count} distinct {split} examples")
            L = int(rng.integers(spec.len_min, spec.len_max + 1))
            src = tuple(int(t) + NUM_SPECIAL for t in rng.integers(0, V, size=L))
            if src in seen:
                continue
            seen.add(src)
            rows.append(Example(src, transform(spec.kind, src)))
        out[split] = rows
    return {k: out[k] for k in ("train", "valid", "test")}


def wrap(tokens) -> list:
    return [BOS, *tokens, EOS]


def make_batch(examples: list[Example]):
    """(src, decoder input, decoder target) padded tensors."""
    src = pad_batch([wrap(e.src) for e in examples])
    tgt = pad_batch([wrap(e.tgt) for e in examples])
    return src, tgt[:, :-1], tgt[:, 1:]


class BatchStream:
    """Endless shuffled mini-batches drawn from the ``data/batches`` stream."""

    def __init__(self, examples: list[Example], batch_size: int, seed: int, name="data/batches"):
        if not examples:
            raise InputError("dataset is empty")
        self.examples = examples
        self.batch_size = min(batch_size, len(examples))
        self.rng = stream(seed, name)
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self):
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(len(self.examples))
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return make_batch([self.examples[i] for i in idx])


def write_split(path, examples: Iterable[Example]):
    """One example per line: ``src<TAB>tgt``, BOS/EOS included, space-separated ids."""
    with open(path, "w") as fh:
        for e in examples:
            fh.write(" ".join(map(str, wrap(e.src))) + "\t" + " ".join(map(str, wrap(e.tgt))) + "\n")


def read_split(path) -> list[Example]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            s, t = line.split("\t")
            src = [int(x) for x in s.split()]
            tgt = [int(x) for x in t.split()]
        except ValueError:
            raise InputError(f"{path}:{lineno}: malformed line") from None
        for seq in (src, tgt):
            if len(seq) < 2 or seq[0] != BOS or seq[-1] != EOS:
                raise InputError(f"{path}:{lineno}: sequence not wrapped in BOS/EOS")
        rows.append(Example(tuple(src[1:-1]), tuple(tgt[1:-1])))
    return rows
