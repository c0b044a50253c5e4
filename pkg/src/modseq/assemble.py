"""Assembling modularized layers into compact models.

Deterministic size-first / speed-first replacement sequences, exhaustive
enumeration (oracle), random baseline, budget selection and cost reports.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ModelConfig
from .errors import BudgetInfeasible, ConfigError
from .plans import Modular, Original, Segment, format_plan, parse_plan, validate_plan

MAX_ENUMERATE_DEPTH = 16


@dataclass
class Assembly:
    enc: list
    dec: list
    n_enc: int
    n_dec: int
    provenance: str = "manual"

    @property
    def total_layers(self) -> int:
        return len(self.enc) + len(self.dec)

    @property
    def shape(self) -> str:
        return f"{len(self.enc)}-{len(self.dec)}"

    def strings(self) -> tuple[str, str]:
        return format_plan(self.enc), format_plan(self.dec)

    def key(self) -> tuple[str, str]:
        return self.strings()

    def validate(self, enc_granularities=None, dec_granularities=None) -> Optional[str]:
        err = validate_plan(self.enc, self.n_enc, enc_granularities)
        if err:
            return f"encoder: {err}"
        err = validate_plan(self.dec, self.n_dec, dec_granularities)
        return f"decoder: {err}" if err else None

    def to_dict(self) -> dict:
        enc, dec = self.strings()
        return {"enc": enc, "dec": dec, "n_enc": self.n_enc, "n_dec": self.n_dec,
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "Assembly":
        return cls(parse_plan(d["enc"]), parse_plan(d["dec"]), d["n_enc"], d["n_dec"],
                   d.get("provenance", "manual"))

    @classmethod
    def original(cls, n_enc: int, n_dec: int, provenance="original") -> "Assembly":
        return cls(originals(1, n_enc), originals(1, n_dec), n_enc, n_dec, provenance)


def originals(lo: int, hi: int) -> list:
    return [Original(k) for k in range(lo, hi + 1)]


# ---------------------------------------------------------------- enumeration

def enumerate_assemblies(n: int, granularities: Sequence[int]) -> list[list[Segment]]:
    """Every tiling of ``1..n`` by originals and aligned modular blocks."""
    if n > MAX_ENUMERATE_DEPTH:
        raise ConfigError(
            f"refusing to enumerate partitions of depth {n} > {MAX_ENUMERATE_DEPTH}; "
            "use count_dp for counting")
    gs = sorted(set(granularities))

    @lru_cache(maxsize=None)
    def tilings(k):
        # all tilings of 1..k, bottom-to-top
        if k == 0:
            return ((),)
        out = [t + (Original(k),) for t in tilings(k - 1)]
        for g in gs:
            if k % g == 0 and k - g >= 0:
                out.extend(t + (Modular(g, k // g),) for t in tilings(k - g))
        return tuple(out)

    return [list(t) for t in tilings(n)]


def count_dp(n: int, granularities: Sequence[int]) -> int:
    """f(0)=1, f(k) = f(k-1) + sum_{g | k} f(k-g)."""
    if n < 0:
        raise ConfigError("n must be >= 0")
    gs = sorted(set(granularities))
    f = [1] + [0] * n
    for k in range(1, n + 1):
        f[k] = f[k - 1] + sum(f[k - g] for g in gs if k % g == 0 and k >= g)
    return f[n]


# ---------------------------------------------------------------- planner

def gap_fill(lo: int, hi: int, allowed: Sequence[int]) -> list[Segment]:
    """Cover ``lo..hi`` top-down with the coarsest aligned blocks that fit."""
    if lo > hi + 1 or lo < 1:
        raise ConfigError(f"invalid gap {lo}..{hi}")
    gs = sorted(set(allowed), reverse=True)
    segs = []
    h = hi
    while h >= lo:
        g = next((g for g in gs if h % g == 0 and h - g + 1 >= lo), None)
        if g is None:
            segs.append(Original(h))
            h -= 1
        else:
            segs.append(Modular(g, h // g))
            h -= g
    segs.reverse()
    return segs


def phase_sequence(n: int, g_from: int, g_to: int, granularities: Sequence[int]) -> list[list[Segment]]:
    """Replace top-down with ``g_to`` blocks, filling below with blocks <= ``g_from``."""
    if g_to < 2 or n % g_to:
        raise ConfigError(f"granularity {g_to} does not divide depth {n}")
    if not g_from < g_to:
        raise ConfigError(f"phase must go fine to coarse, got {g_from} -> {g_to}")
    finer = [g for g in granularities if g <= g_from]
    out = []
    nb = n // g_to
    for c in range(1, nb + 1):
        top = [Modular(g_to, j) for j in range(nb - c + 1, nb + 1)]
        out.append(gap_fill(1, n - c * g_to, finer) + top)
    return out


def ladder_phases(granularities: Sequence[int]) -> list[tuple[int, int]]:
    ladder = [1] + sorted(set(granularities))
    return list(zip(ladder, ladder[1:]))


def strategy_phase_order(enc_granularities, dec_granularities, strategy: str):
    enc = [("enc", a, b) for a, b in ladder_phases(enc_granularities)]
    dec = [("dec", a, b) for a, b in ladder_phases(dec_granularities)]
    if strategy == "size-first":
        order = []
        for r in range(max(len(enc), len(dec))):
            order.extend(dec[r:r + 1])
            order.extend(enc[r:r + 1])
        return order
    if strategy == "speed-first":
        if len(dec) >= 2:
            return dec[:-1] + enc[:1] + dec[-1:] + enc[1:]
        return dec + enc
    raise ConfigError(f"unknown strategy {strategy!r}")


def strategy_sequence(n_enc: int, n_dec: int, enc_granularities: Sequence[int],
                      dec_granularities: Sequence[int], strategy: str) -> list[Assembly]:
    """Decoder-first, top-down, fine-to-coarse replacement sequence.

    Element 0 is the original model; each later element replaces one more
    block.  Layer counts never increase along the sequence.
    """
    current = {"enc": originals(1, n_enc), "dec": originals(1, n_dec)}
    depth = {"enc": n_enc, "dec": n_dec}
    gsets = {"enc": list(enc_granularities), "dec": list(dec_granularities)}
    seq = [Assembly(list(current["enc"]), list(current["dec"]), n_enc, n_dec, f"{strategy}:0")]
    for stack, a, b in strategy_phase_order(enc_granularities, dec_granularities, strategy):
        for part in phase_sequence(depth[stack], a, b, gsets[stack]):
            current[stack] = part
            seq.append(Assembly(list(current["enc"]), list(current["dec"]), n_enc, n_dec,
                                f"{strategy}:{len(seq)}"))
    return seq


# ---------------------------------------------------------------- costs

def layer_parameter_counts(cfg: ModelConfig) -> tuple[int, int, int]:
    """(encoder layer, decoder layer, shell) parameter counts."""
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    enc = 4 * d * d + 2 * d * f + 2 * 2 * d
    dec = 8 * d * d + 2 * d * f + 3 * 2 * d
    shell = v * d + cfg.max_len * d + 2 * 2 * d + d * v
    return enc, dec, shell


@dataclass
class CostModel:
    """Latency ~ a*enc_layers*src_len + b*dec_layers*gen_len*steps + c."""
    a: float = 1.0
    b: float = 1.0
    c: float = 0.0
    cached: bool = False

    def __post_init__(self):
        if min(self.a, self.b, self.c) < 0 or self.a + self.b <= 0:
            raise ConfigError("cost coefficients must be nonnegative with a + b > 0")

    def latency(self, enc_layers: int, dec_layers: int, src_len: int, gen_len: int) -> float:
        steps = 1 if self.cached else gen_len
        return self.a * enc_layers * src_len + self.b * dec_layers * gen_len * steps + self.c


def calibrate_cost_model(samples: Sequence[tuple[int, int, float]], src_len: int, gen_len: int,
                         cached: bool = False) -> CostModel:
    """Nonnegative least-squares fit of (a, b, c) to (enc_layers, dec_layers, ms) samples."""
    from scipy.optimize import nnls

    if len(samples) < 4:
        raise ConfigError("need latency measurements for at least 4 assemblies")
    steps = 1 if cached else gen_len
    A = np.array([[e * src_len, d * gen_len * steps, 1.0] for e, d, _ in samples])
    y = np.array([ms for _, _, ms in samples], dtype=float)
    coef, _ = nnls(A, y)
    a, b, c = (float(x) for x in coef)
    if a + b <= 0:
        b = 1e-12
    return CostModel(a, b, c, cached)


@dataclass
class CostReport:
    enc_layers: int
    dec_layers: int
    total_layers: int
    params: int
    size_ratio: float
    est_latency: float
    est_speed_ratio: float
    measured_ms: Optional[float] = None

    def to_dict(self):
        return dict(self.__dict__)


def assembly_parameters(assembly: Assembly, cfg: ModelConfig) -> int:
    enc, dec, shell = layer_parameter_counts(cfg)
    return shell + enc * len(assembly.enc) + dec * len(assembly.dec)


def cost_estimate(assembly: Assembly, model: CostModel, src_len: int, gen_len: int,
                  cfg: Optional[ModelConfig] = None, params: Optional[int] = None) -> CostReport:
    if src_len < 1 or gen_len < 1:
        raise ConfigError("src_len and gen_len must be >= 1")
    E, D = len(assembly.enc), len(assembly.dec)
    est = model.latency(E, D, src_len, gen_len)
    base = model.latency(assembly.n_enc, assembly.n_dec, src_len, gen_len)
    if params is None:
        params = assembly_parameters(assembly, cfg) if cfg is not None else 0
    return CostReport(
        enc_layers=E, dec_layers=D, total_layers=E + D, params=params,
        size_ratio=(assembly.n_enc + assembly.n_dec) / (E + D),
        est_latency=est, est_speed_ratio=base / est if est > 0 else float("inf"),
    )


# ---------------------------------------------------------------- selection

@dataclass(frozen=True)
class Budget:
    kind: str  # "layers" | "size-ratio" | "speed-ratio"
    value: float

    @classmethod
    def parse(cls, text: str) -> "Budget":
        try:
            kind, val = text.split("=", 1)
            kind = kind.strip()
            value = int(val) if kind == "layers" else float(val)
        except ValueError:
            raise ConfigError(f"bad budget {text!r}; expected layers=N or size-ratio=X") from None
        if kind not in ("layers", "size-ratio", "speed-ratio"):
            raise ConfigError(f"unknown budget kind {kind!r}")
        return cls(kind, value)

    def __str__(self):
        return f"{self.kind}={self.value}"


def _budget_measure(assembly, budget, cost_model, src_len, gen_len):
    if budget.kind == "layers":
        return assembly.total_layers
    if budget.kind == "size-ratio":
        return (assembly.n_enc + assembly.n_dec) / assembly.total_layers
    if cost_model is None:
        raise ConfigError("speed-ratio budget needs a cost model")
    return cost_estimate(assembly, cost_model, src_len, gen_len).est_speed_ratio


def satisfies(assembly, budget, cost_model=None, src_len=10, gen_len=10) -> bool:
    v = _budget_measure(assembly, budget, cost_model, src_len, gen_len)
    return v <= budget.value if budget.kind == "layers" else v >= budget.value - 1e-12


def select_by_budget(sequence: Sequence[Assembly], budget: Budget,
                     cost_model: Optional[CostModel] = None, src_len: int = 10,
                     gen_len: int = 10) -> Assembly:
    """First (least-replaced) assembly in ``sequence`` meeting ``budget``."""
    for asm in sequence:
        if satisfies(asm, budget, cost_model, src_len, gen_len):
            return asm
    vals = [_budget_measure(a, budget, cost_model, src_len, gen_len) for a in sequence]
    best = min(vals) if budget.kind == "layers" else max(vals)
    raise BudgetInfeasible(f"budget infeasible, max achievable = {best:g}", best)


# ---------------------------------------------------------------- baselines

def random_partition(n: int, granularities: Sequence[int], layer_budget: int,
                     rng: np.random.Generator, exact: bool = False) -> list[Segment]:
    cands = [p for p in enumerate_assemblies(n, granularities)
             if (len(p) == layer_budget if exact else len(p) <= layer_budget)]
    if not cands:
        lo = min(len(p) for p in enumerate_assemblies(n, granularities))
        raise BudgetInfeasible(f"budget infeasible, minimum layers for depth {n} = {lo}", lo)
    return cands[int(rng.integers(len(cands)))]


def random_assembly(n_enc, n_dec, enc_granularities, dec_granularities, enc_budget, dec_budget,
                    rng: np.random.Generator, exact: bool = False) -> Assembly:
    """Uniform draw per stack among partitions within the layer budget."""
    enc = random_partition(n_enc, enc_granularities, enc_budget, rng, exact)
    dec = random_partition(n_dec, dec_granularities, dec_budget, rng, exact)
    return Assembly(enc, dec, n_enc, n_dec, "random")


def random_assembly_total(n_enc, n_dec, enc_granularities, dec_granularities, total_budget: int,
                          rng: np.random.Generator) -> Assembly:
    """Uniform draw over (encoder, decoder) partition pairs with total layers <= budget."""
    enc_all = enumerate_assemblies(n_enc, enc_granularities)
    dec_all = enumerate_assemblies(n_dec, dec_granularities)
    dec_by_len: dict[int, list] = {}
    for p in dec_all:
        dec_by_len.setdefault(len(p), []).append(p)
    weights = []
    for e in enc_all:
        weights.append(sum(len(v) for L, v in dec_by_len.items() if len(e) + L <= total_budget))
    total = sum(weights)
    if total == 0:
        lo = min(len(e) for e in enc_all) + min(dec_by_len)
        raise BudgetInfeasible(f"budget infeasible, minimum total layers = {lo}", lo)
    r = int(rng.integers(total))
    for e, w in zip(enc_all, weights):
        if r < w:
            pool = [d for L in sorted(dec_by_len) if len(e) + L <= total_budget for d in dec_by_len[L]]
            return Assembly(e, pool[r], n_enc, n_dec, "random")
        r -= w
    raise AssertionError("unreachable")


def oracle_search(score: Callable[[Assembly], float], n_enc, n_dec, enc_granularities,
                  dec_granularities) -> dict[int, tuple[Assembly, float]]:
    """Exhaustively score every assembly; best (first on ties) per total layer count."""
    best: dict[int, tuple[Assembly, float]] = {}
    for e in enumerate_assemblies(n_enc, enc_granularities):
        for d in enumerate_assemblies(n_dec, dec_granularities):
            asm = Assembly(e, d, n_enc, n_dec, "oracle")
            s = score(asm)
            L = asm.total_layers
            if L not in best or s > best[L][1]:
                best[L] = (asm, s)
    return dict(sorted(best.items()))
