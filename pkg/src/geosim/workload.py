"""Per-country vaccination rates and seeded Poisson arrival streams.

Random numbers come from numpy's PCG64 bit generator.  Every NIB and the GIB
draw from their own ``SeedSequence`` substream, keyed by ``(seed, stream)``,
so runs are reproducible and parallel execution shares no RNG state.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable

import numpy as np

RNG_ALGORITHM = "pcg64"
GIB_STREAM = 1_000_000


@dataclass(frozen=True)
class CountryProfile:
    name: str
    iso: str
    population: int
    doses_per_person_year: float = 2.0
    working_days: int = 260
    hours_per_day: float = 8.0
    rate_override_tps: float | None = None

    def __post_init__(self):
        if self.population <= 0:
            raise ValueError(f"{self.iso}: population must be positive")
        if self.doses_per_person_year <= 0 or self.working_days <= 0 or self.hours_per_day <= 0:
            raise ValueError(f"{self.iso}: rate parameters must be positive")

    @property
    def rate(self) -> float:
        """Arrival rate used by simulations: the override if present, else derived."""
        if self.rate_override_tps is not None:
            return self.rate_override_tps
        return country_rate(self)


def country_rate(profile: CountryProfile) -> float:
    seconds = profile.working_days * profile.hours_per_day * 3600
    return profile.population * profile.doses_per_person_year / seconds


def load_countries(source: str | None = None) -> list[CountryProfile]:
    """Read ``iso,name,population[,rate_override_tps]`` rows; the bundled table by default."""
    if source is None:
        text = resources.files("geosim.data").joinpath("countries.csv").read_text(encoding="utf-8")
    else:
        with open(source, encoding="utf-8") as f:
            text = f.read()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or reader.fieldnames[:3] != ["iso", "name", "population"]:
        raise ValueError("country table needs an iso,name,population header")
    out = []
    for row in reader:
        override = (row.get("rate_override_tps") or "").strip()
        out.append(
            CountryProfile(
                name=row["name"],
                iso=row["iso"],
                population=int(row["population"]),
                rate_override_tps=float(override) if override else None,
            )
        )
    return out


def country(iso: str, profiles: Iterable[CountryProfile] | None = None) -> CountryProfile:
    for p in profiles if profiles is not None else load_countries():
        if p.iso == iso.upper():
            return p
    raise KeyError(f"unknown country {iso!r}")


def substream(seed: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream,))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class ArrivalProcess:
    rate: float
    rng_seed: int
    stream: int = 0
    kind: str = "poisson"
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind != "poisson":
            raise ValueError("only Poisson arrivals are supported")
        if not self.rate > 0:
            raise ValueError("arrival rate must be positive")
        self._rng = substream(self.rng_seed, self.stream)


def next_arrival(proc: ArrivalProcess, now: float) -> float:
    return now + float(proc._rng.exponential(1.0 / proc.rate))


def generate_arrivals(rate: float, duration: float, seed: int, stream: int = 0) -> np.ndarray:
    """All arrival times in ``[0, duration)``; same values as iterating :func:`next_arrival`."""
    if duration <= 0 or rate <= 0:
        return np.empty(0)
    rng = substream(seed, stream)
    scale = 1.0 / rate
    chunks = []
    last = 0.0
    expect = rate * duration
    size = int(expect + 6 * math.sqrt(expect) + 16)
    while True:
        steps = rng.exponential(scale, size)
        # sequential fold from the previous arrival keeps values identical to next_arrival
        times = np.cumsum(np.concatenate(([last], steps)))[1:]
        cut = int(np.searchsorted(times, duration, side="left"))
        chunks.append(times[:cut])
        if cut < size:
            break
        last = float(times[-1])
        size = max(1024, size // 4)
    return np.concatenate(chunks)


def gib_arrival_rate(nib_runs: Iterable, gamma: int) -> float:
    """Summed block-commit rate of all NIBs divided by the report cadence."""
    if gamma < 1:
        raise ValueError("cadence must be at least one block")
    total = 0.0
    for run in nib_runs:
        bps = run if isinstance(run, (int, float)) else run.blocks_per_s
        total += bps / gamma
    return total
