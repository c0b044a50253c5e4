"""Coverage partitions of a layer stack: segments, string form, validation.

A partition lists segments bottom-to-top.  ``Original(k)`` is teacher layer
``t_k``; ``Modular(i, j)`` is the modularized layer of granularity ``i``
covering layers ``i*(j-1)+1 .. i*j``.  String form: ``t3`` / ``m3.2`` joined
by ``|``, e.g. ``m2.1|t3|m3.2|t7|t8|m4.3``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .errors import ConfigError


def covered_span(i: int, j: int) -> tuple[int, int]:
    return i * (j - 1) + 1, i * j


@dataclass(frozen=True)
class Original:
    k: int

    @property
    def lo(self):
        return self.k

    @property
    def hi(self):
        return self.k

    def __str__(self):
        return f"t{self.k}"


@dataclass(frozen=True)
class Modular:
    i: int
    j: int

    @property
    def lo(self):
        return self.i * (self.j - 1) + 1

    @property
    def hi(self):
        return self.i * self.j

    @property
    def teacher_index(self):
        """Teacher layer whose output this layer is distilled towards."""
        return self.i * self.j

    def __str__(self):
        return f"m{self.i}.{self.j}"


Segment = Union[Original, Modular]

_TOKEN = re.compile(r"^(?:t(\d+)|m(\d+)\.(\d+))$")


def format_plan(segments: Sequence[Segment]) -> str:
    return "|".join(str(s) for s in segments)


def parse_plan(text: str) -> list[Segment]:
    out = []
    for tok in text.strip().split("|"):
        m = _TOKEN.match(tok.strip())
        if not m:
            raise ConfigError(f"bad segment {tok!r} in plan {text!r}")
        if m.group(1) is not None:
            out.append(Original(int(m.group(1))))
        else:
            out.append(Modular(int(m.group(2)), int(m.group(3))))
    return out


def validate_plan(segments: Sequence[Segment], n: int,
                  granularities: Optional[Sequence[int]] = None) -> Optional[str]:
    """Return ``None`` if ``segments`` tile ``1..n`` with aligned blocks, else a description."""
    covered = 0
    for pos, seg in enumerate(segments):
        if isinstance(seg, Modular):
            if seg.i < 2 or seg.j < 1:
                return f"segment {pos} ({seg}): invalid granularity/index"
            if granularities is not None and seg.i not in granularities:
                return f"segment {pos} ({seg}): granularity {seg.i} not available"
        elif not isinstance(seg, Original):
            return f"segment {pos}: unknown segment type {type(seg).__name__}"
        if seg.lo < 1 or seg.hi > n:
            return f"segment {pos} ({seg}): span {seg.lo}-{seg.hi} outside 1-{n}"
        if seg.lo <= covered:
            return f"overlap at layer {covered}"
        if seg.lo > covered + 1:
            return f"gap at layer {covered + 1}"
        covered = seg.hi
    if covered != n:
        return f"gap at layer {covered + 1}"
    return None


def layer_count(segments: Sequence[Segment]) -> int:
    return len(segments)
