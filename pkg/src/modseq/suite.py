"""The suite of modularized layers and helpers to execute a partition."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence

from torch import nn

from .errors import ConfigError
from .plans import Modular, Original, Segment, covered_span, validate_plan
from .transformer import Seq2Seq

STACKS = ("enc", "dec")


def granularity_set(n: int) -> list[int]:
    """All divisors of ``n`` strictly between 1 and ``n``."""
    if n < 1:
        raise ConfigError(f"stack depth must be positive, got {n}")
    return [g for g in range(2, n) if n % g == 0]


def require_granularities(n: int, stack: str = "stack") -> list[int]:
    gs = granularity_set(n)
    if not gs:
        raise ConfigError(f"{stack} depth {n} has no proper divisors; it cannot be compressed")
    return gs


@dataclass(frozen=True)
class ModularLayerId:
    stack: str
    i: int
    j: int

    @property
    def span(self):
        return covered_span(self.i, self.j)

    @property
    def key(self):
        return f"m{self.i}_{self.j}"


def _key(i, j):
    return f"m{i}_{j}"


class ModuleSuite(nn.Module):
    """Trainable modularized layers for both stacks.

    The frozen teacher is kept as a plain attribute (not a submodule) so that
    ``suite.parameters()`` yields only modularized-layer weights.
    """

    def __init__(self, enc_layers: dict, dec_layers: dict, granularities: dict,
                 teacher: Optional[Seq2Seq] = None):
        super().__init__()
        self.enc = nn.ModuleDict(enc_layers)
        self.dec = nn.ModuleDict(dec_layers)
        self.granularities = {k: list(v) for k, v in granularities.items()}
        self.__dict__["teacher"] = teacher

    def stack(self, stack: str) -> nn.ModuleDict:
        if stack not in STACKS:
            raise ValueError(f"unknown stack {stack!r}")
        return self.enc if stack == "enc" else self.dec

    def layer(self, stack: str, i: int, j: int):
        try:
            return self.stack(stack)[_key(i, j)]
        except KeyError:
            raise ConfigError(f"suite has no modularized layer m{i}.{j} in {stack}") from None

    def ids(self, stack: Optional[str] = None) -> list[ModularLayerId]:
        out = []
        for st in STACKS if stack is None else (stack,):
            for g in self.granularities[st]:
                n = self.depth(st)
                out.extend(ModularLayerId(st, g, j) for j in range(1, n // g + 1))
        return out

    def depth(self, stack: str) -> int:
        return self.teacher.cfg.n_enc if stack == "enc" else self.teacher.cfg.n_dec

    def resolve(self, stack: str, segments: Sequence[Segment], teacher: Optional[Seq2Seq] = None):
        """Map a partition to the ordered list of layer modules to execute."""
        teacher = self.teacher if teacher is None else teacher
        return resolve_layers(stack, segments, teacher, self)


def resolve_layers(stack: str, segments: Sequence[Segment], teacher: Seq2Seq,
                   suite: Optional[ModuleSuite] = None) -> list:
    base = teacher.enc_layers if stack == "enc" else teacher.dec_layers
    err = validate_plan(segments, len(base))
    if err:
        raise ConfigError(f"{stack}: {err}")
    layers = []
    for seg in segments:
        if isinstance(seg, Original):
            layers.append(base[seg.k - 1])
        else:
            if suite is None:
                raise ConfigError(f"partition uses {seg} but no suite was given")
            layers.append(suite.layer(stack, seg.i, seg.j))
    return layers


def init_suite(teacher: Seq2Seq, enc_granularities: Optional[Sequence[int]] = None,
               dec_granularities: Optional[Sequence[int]] = None) -> ModuleSuite:
    """Create every m_ij as an exact copy of teacher layer t_{i*j}."""
    cfg = teacher.cfg
    gs = {
        "enc": list(enc_granularities) if enc_granularities is not None
        else require_granularities(cfg.n_enc, "encoder"),
        "dec": list(dec_granularities) if dec_granularities is not None
        else require_granularities(cfg.n_dec, "decoder"),
    }
    layers = {}
    for st, n, base in (("enc", cfg.n_enc, teacher.enc_layers), ("dec", cfg.n_dec, teacher.dec_layers)):
        if not gs[st]:
            raise ConfigError(f"{st} stack has an empty granularity set")
        for g in gs[st]:
            if g < 2 or n % g or g >= n:
                raise ConfigError(f"granularity {g} is not a proper divisor of {st} depth {n}")
        layers[st] = {}
        for g in gs[st]:
            for j in range(1, n // g + 1):
                layer = copy.deepcopy(base[g * j - 1])
                for p in layer.parameters():
                    p.requires_grad_(True)
                layers[st][_key(g, j)] = layer
    return ModuleSuite(layers["enc"], layers["dec"], gs, teacher)


def suite_size(n: int, granularities: Sequence[int]) -> int:
    return sum(n // g for g in granularities)


def freeze(model: nn.Module) -> nn.Module:
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def check_partition(segments, n, granularities=None):
    err = validate_plan(segments, n, granularities)
    if err is not None:
        raise ConfigError(err)
