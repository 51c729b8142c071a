"""Desk-scale benchmark definitions for the 2-, 3- and 4-modality settings.

Latent counts, observation widths and sample sizes are stand-ins chosen to
train in CPU minutes; every report produced from them carries the
``stand_in_dims`` flag.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .scmgen import SharingPattern


@dataclass(frozen=True)
class Benchmark:
    name: str
    pattern: SharingPattern
    n: int = 20_000
    edge_density: float = 0.3
    generator: dict = field(default_factory=dict)
    stand_in_dims: bool = True


def _mod2() -> SharingPattern:
    # two shared latents (3, 4); modality 0 adds two specifics, modality 1 adds one
    return SharingPattern(5, ((0, 1, 3, 4), (3, 4, 2)), k=2.0, dims=(10, 8))


def _mod3() -> SharingPattern:
    # a chain: neighbouring modalities share one latent, the two ends share nothing
    return SharingPattern(10, ((0, 1, 2, 8), (8, 3, 4, 9), (9, 5, 6, 7)), k=1.0, dims=(8, 8, 8))


def _mod4() -> SharingPattern:
    return SharingPattern(12, ((0, 1, 9), (9, 2, 3, 10), (10, 4, 5, 11), (11, 6, 7, 8)),
                          k=1.0, dims=(6, 8, 8, 8))


BENCHMARKS = {
    "mod2": Benchmark("mod2", _mod2()),
    "mod3": Benchmark("mod3", _mod3()),
    "mod4": Benchmark("mod4", _mod4()),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
