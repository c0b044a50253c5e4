"""Greedy multi-grained hybrid sampling and the replacing curriculum."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .plans import Modular, Original, Segment, format_plan


def default_waypoints(n_granularities: int) -> list[list[Fraction]]:
    """Fine-to-coarse waypoints; for four granularities
    [1,0,0,0] -> [.75,.25,0,0] -> [.5,.25,.25,0] -> [.25,.25,.25,.25]."""
    m = n_granularities
    if m < 1:
        raise ConfigError("need at least one granularity")
    pts = []
    for q in range(m):
        vec = [Fraction(0)] * m
        vec[0] = 1 - Fraction(q, m)
        for r in range(1, q + 1):
            vec[r] = Fraction(1, m)
        pts.append(vec)
    return pts


def uniform(m: int) -> list[Fraction]:
    return [Fraction(1, m)] * m


@dataclass
class ReplaceSchedule:
    """Replacing probability ``p`` ramp plus piecewise-linear granularity weights.

    ``p`` rises linearly from ``p0`` at step 0 to 1 at ``p_ramp_end * T``.
    Consecutive waypoints are joined by transitions of ``T/4`` steps each
    (squeezed into the first three quarters when there are more than three
    transitions); the last waypoint holds afterwards.
    """
    total_steps: int
    granularities: Sequence[int]
    p0: float = 0.5
    p_ramp_end: float = 0.5
    waypoints: Optional[list] = None
    curriculum: bool = True

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if not 0.0 <= self.p0 <= 1.0 or not 0.0 <= self.p_ramp_end <= 1.0:
            raise ConfigError("p0 and p_ramp_end must lie in [0, 1]")
        m = len(self.granularities)
        if self.waypoints is None:
            self.waypoints = default_waypoints(m)
        pts = []
        for w in self.waypoints:
            if len(w) != m:
                raise ConfigError(f"waypoint {w} does not match {m} granularities")
            w = [Fraction(x).limit_denominator(10**9) if isinstance(x, float) else Fraction(x) for x in w]
            if any(x < 0 for x in w) or sum(w) != 1:
                raise ConfigError(f"waypoint {[float(x) for x in w]} is not a probability vector")
            pts.append(w)
        if not pts:
            raise ConfigError("need at least one waypoint")
        self.waypoints = pts

    @property
    def phase_length(self) -> Fraction:
        transitions = len(self.waypoints) - 1
        T = Fraction(self.total_steps)
        if transitions <= 3:
            return T / 4
        return T * Fraction(3, 4) / transitions


def schedule_at(schedule: ReplaceSchedule, step: int) -> tuple[float, list[float]]:
    """Return ``(p, probs)`` at ``step``; waypoint values are exact."""
    T = schedule.total_steps
    if not 0 <= step <= max(T, 0):
        raise ConfigError(f"step {step} outside [0, {T}]")
    ramp = Fraction(schedule.p_ramp_end).limit_denominator(10**9) * T
    if ramp == 0 or step >= ramp:
        p = 1.0
    else:
        p0 = Fraction(schedule.p0).limit_denominator(10**9)
        p = float(p0 + (1 - p0) * Fraction(step) / ramp)
    m = len(schedule.granularities)
    if not schedule.curriculum:
        return p, [float(x) for x in uniform(m)]
    pts = schedule.waypoints
    phase = schedule.phase_length
    if len(pts) == 1 or phase == 0:
        return p, [float(x) for x in pts[0]]
    pos = Fraction(step) / phase
    idx = math.floor(pos)
    if idx >= len(pts) - 1:
        return p, [float(x) for x in pts[-1]]
    frac = pos - idx
    a, b = pts[idx], pts[idx + 1]
    return p, [float(x + (y - x) * frac) for x, y in zip(a, b)]


@dataclass
class HybridPlan:
    stack: str
    segments: list
    n: int
    step: Optional[int] = None
    p: Optional[float] = None
    probs: Optional[list] = None
    stream: Optional[str] = None

    def __str__(self):
        return format_plan(self.segments)


class NumpyDraws:
    """Bernoulli / categorical draws from a numpy generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def replace(self, k: int, p: float) -> bool:
        return bool(self.rng.random() < p)

    def granularity(self, k: int, choices: Sequence[int], weights: Sequence[float]) -> int:
        u = self.rng.random()
        acc = 0.0
        for g, w in zip(choices, weights):
            acc += w
            if u < acc:
                return g
        # u landed in the rounding tail; return the last positive-weight choice
        return [g for g, w in zip(choices, weights) if w > 0][-1]


def _check_probs(granularities, probs):
    if len(probs) != len(granularities):
        raise ConfigError(f"probability vector of length {len(probs)} for {len(granularities)} granularities")
    for x in probs:
        if not (x >= 0) or math.isnan(x) or math.isinf(x):
            raise ConfigError(f"invalid granularity probability {x!r}")
    if abs(sum(probs) - 1.0) > 1e-9:
        raise ConfigError(f"granularity probabilities sum to {sum(probs)}, not 1")


def sample_hybrid_with(n: int, granularities: Sequence[int], p: float, probs: Sequence[float],
                       draws) -> list[Segment]:
    """Greedy top-down replacing loop with an injectable draw source."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ConfigError(f"replacing probability {p!r} outside [0, 1]")
    _check_probs(granularities, probs)
    segs: list[Segment] = []
    k = n
    while k > 0:
        if not draws.replace(k, p):
            segs.append(Original(k))
            k -= 1
            continue
        feasible = [(g, w) for g, w in zip(granularities, probs) if g <= k and w > 0]
        total = sum(w for _, w in feasible)
        if not feasible or total <= 0:
            segs.append(Original(k))
            k -= 1
            continue
        i = draws.granularity(k, [g for g, _ in feasible], [w / total for _, w in feasible])
        j = k // i
        if k % i == 0:
            segs.append(Modular(i, j))
            k -= i
        else:
            # originals t_{i*j+1..k} sit above the block; collected top-down
            segs.extend(Original(t) for t in range(k, i * j, -1))
            segs.append(Modular(i, j))
            k = i * (j - 1)
    segs.reverse()
    return segs


def sample_hybrid(n: int, granularities: Sequence[int], p: float, probs: Sequence[float],
                  rng: np.random.Generator, stack: str = "enc", step: Optional[int] = None,
                  stream: Optional[str] = None) -> HybridPlan:
    segs = sample_hybrid_with(n, granularities, p, probs, NumpyDraws(rng))
    return HybridPlan(stack, segs, n, step, p, list(probs), stream)
