"""Synthetic multimodal workload generation and hybrid packing.

Batches are produced from dataset descriptors plus a phase schedule of
mixture recipes, then packed across modalities into fixed-capacity sequences
(first-fit decreasing).  Everything is a deterministic function of
(config, seed, step).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

# Phi^-1(0.95), used to fit the lognormal scale from a p95 target.
_Z95 = 1.6448536269514722


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"
    VIDEO = "video"
    AUDIO = "audio"


class ConfigError(ValueError):
    pass


class PackingError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetDescriptor:
    """One data source with a parametric (or empirical) length distribution."""

    name: str
    modality: Modality
    mean_len: float
    max_len: int
    p95_len: float = 0.0  # 0 -> defaults to 2x mean
    histogram: tuple[tuple[int, int, float], ...] = ()  # (lo, hi, weight) bins

    def __post_init__(self):
        if self.mean_len <= 0:
            raise ConfigError(f"dataset {self.name}: mean_len must be positive")
        if self.max_len < self.mean_len:
            raise ConfigError(f"dataset {self.name}: max_len must be >= mean_len")

    def lognormal_params(self) -> tuple[float, float]:
        p95 = self.p95_len if self.p95_len > 0 else 2.0 * self.mean_len
        spread = math.log(p95 / self.mean_len)
        if spread <= 0:
            return math.log(self.mean_len), 1e-6
        disc = _Z95 * _Z95 - 2.0 * spread
        if disc < 0:
            raise ConfigError(
                f"dataset {self.name}: p95/mean ratio too large for a lognormal fit")
        sigma = _Z95 - math.sqrt(disc)
        mu = math.log(self.mean_len) - 0.5 * sigma * sigma
        return mu, sigma

    def sample_lengths(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.histogram:
            los = np.array([b[0] for b in self.histogram], dtype=np.float64)
            his = np.array([b[1] for b in self.histogram], dtype=np.float64)
            w = np.array([b[2] for b in self.histogram], dtype=np.float64)
            w = w / w.sum()
            bins = rng.choice(len(w), size=n, p=w)
            raw = los[bins] + rng.random(n) * (his[bins] - los[bins])
        else:
            mu, sigma = self.lognormal_params()
            raw = rng.lognormal(mu, sigma, size=n)
        return np.clip(np.rint(raw), 1, self.max_len).astype(np.int64)


@dataclass(frozen=True)
class MixtureRecipe:
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self):
        total = sum(r for _, r in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"mixture ratios sum to {total}, expected 1")
        if any(r < 0 for _, r in self.entries):
            raise ConfigError("mixture ratios must be nonnegative")

    @staticmethod
    def of(**ratios: float) -> "MixtureRecipe":
        return MixtureRecipe(tuple(sorted(ratios.items())))

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)


class Interpolation(str, Enum):
    STEP = "step"
    LINEAR = "linear"


@dataclass(frozen=True)
class PhaseSchedule:
    """Ordered (start_step, recipe) phases with optional linear ratio drift."""

    phases: tuple[tuple[int, MixtureRecipe], ...]
    interpolation: Interpolation = Interpolation.STEP

    def __post_init__(self):
        if not self.phases:
            raise ConfigError("phase schedule needs at least one phase")
        if self.phases[0][0] != 0:
            raise ConfigError("phase 0 must start at step 0")
        steps = [s for s, _ in self.phases]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("phase start steps must be strictly increasing")

    def recipe_at(self, step: int) -> MixtureRecipe:
        if step < 0:
            raise ValueError("step must be nonnegative")
        idx = 0
        for i, (start, _) in enumerate(self.phases):
            if start <= step:
                idx = i
        if self.interpolation == Interpolation.STEP or idx == len(self.phases) - 1:
            return self.phases[idx][1]
        s0, r0 = self.phases[idx]
        s1, r1 = self.phases[idx + 1]
        t = (step - s0) / (s1 - s0)
        names = sorted(set(r0.as_dict()) | set(r1.as_dict()))
        a, b = r0.as_dict(), r1.as_dict()
        mixed = {n: (1 - t) * a.get(n, 0.0) + t * b.get(n, 0.0) for n in names}
        total = sum(mixed.values())
        return MixtureRecipe(tuple(sorted((n, v / total) for n, v in mixed.items())))


@dataclass
class Sample:
    id: int
    modality: Modality
    dataset: str
    length: int
    origin_rank: int = -1
    origin_pos: int = -1

    def key(self) -> tuple[int, int]:
        return (self.origin_rank, self.origin_pos)


@dataclass
class PackedSequence:
    capacity: int
    spans: list[tuple[int, int]] = field(default_factory=list)  # (sample id, tokens)

    @property
    def fill(self) -> int:
        return sum(t for _, t in self.spans)

    def fits(self, tokens: int) -> bool:
        return self.fill + tokens <= self.capacity


@dataclass
class GlobalBatch:
    step: int
    sequences: list[PackedSequence]
    dp_degree: int
    microbatch_size: int

    @property
    def microbatches_per_replica(self) -> int:
        return len(self.sequences) // (self.dp_degree * self.microbatch_size)

    def replica_microbatch(self, replica: int, mb: int) -> list[PackedSequence]:
        per_replica = len(self.sequences) // self.dp_degree
        base = replica * per_replica + mb * self.microbatch_size
        return self.sequences[base:base + self.microbatch_size]

    def total_tokens(self) -> int:
        return sum(seq.fill for seq in self.sequences)


class DatasetRegistry:
    def __init__(self, descriptors: list[DatasetDescriptor] | None = None):
        self._by_name: dict[str, DatasetDescriptor] = {}
        for d in descriptors or []:
            self.add(d)

    def add(self, d: DatasetDescriptor):
        if d.name in self._by_name:
            raise ConfigError(f"duplicate dataset {d.name!r}")
        self._by_name[d.name] = d

    def get(self, name: str) -> DatasetDescriptor:
        if name not in self._by_name:
            raise ConfigError(f"unknown dataset {name!r}")
        return self._by_name[name]

    def names(self) -> list[str]:
        return sorted(self._by_name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name


def sample_step(registry: DatasetRegistry, schedule: PhaseSchedule, step: int,
                n: int, seed: int, id_base: int = 0) -> list[Sample]:
    """Draw n samples for `step` following the interpolated recipe.

    The stream is a pure function of (seed, step, n): per-draw dataset choice
    and per-dataset lengths come from a SeedSequence spawned on (seed, step).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if step < 0:
        raise ValueError("step must be nonnegative")
    recipe = schedule.recipe_at(step)
    names = [name for name, _ in recipe.entries]
    probs = np.array([r for _, r in recipe.entries], dtype=np.float64)
    for name in names:
        registry.get(name)
    rng = np.random.default_rng(np.random.SeedSequence([seed, step]))
    choices = rng.choice(len(names), size=n, p=probs / probs.sum())
    samples: list[Sample] = [None] * n  # type: ignore[list-item]
    for di, name in enumerate(names):
        idx = np.flatnonzero(choices == di)
        if idx.size == 0:
            continue
        d = registry.get(name)
        lengths = d.sample_lengths(rng, idx.size)
        for j, i in enumerate(idx):
            samples[i] = Sample(id=id_base + int(i), modality=d.modality,
                                dataset=name, length=int(lengths[j]))
    return samples


def hybrid_pack(samples: list[Sample], capacity: int) -> list[PackedSequence]:
    """First-fit-decreasing packing across modalities.

    Samples are never split here; splitting happens later during resharding.
    """
    for s in samples:
        if s.length > capacity:
            raise PackingError(
                f"sample {s.id} ({s.length} tokens) exceeds capacity {capacity}")
    order = sorted(samples, key=lambda s: (-s.length, s.id))
    sequences: list[PackedSequence] = []
    fills: list[int] = []
    for s in order:
        for i, f in enumerate(fills):
            if f + s.length <= capacity:
                sequences[i].spans.append((s.id, s.length))
                fills[i] += s.length
                break
        else:
            seq = PackedSequence(capacity=capacity, spans=[(s.id, s.length)])
            sequences.append(seq)
            fills.append(s.length)
    return sequences


def build_global_batch(sequences: list[PackedSequence], step: int,
                       global_batch_size: int, dp_degree: int,
                       microbatch_size: int) -> tuple[GlobalBatch, list[PackedSequence]]:
    """Take the first `global_batch_size` sequences; return the rest as carryover."""
    if global_batch_size % (dp_degree * microbatch_size) != 0:
        raise ConfigError(
            f"global batch {global_batch_size} not divisible by "
            f"dp {dp_degree} x microbatch size {microbatch_size}")
    if len(sequences) < global_batch_size:
        raise ValueError(
            f"need {global_batch_size} sequences, have {len(sequences)}")
    batch = GlobalBatch(step=step, sequences=sequences[:global_batch_size],
                        dp_degree=dp_degree, microbatch_size=microbatch_size)
    return batch, sequences[global_batch_size:]


def generate_batch(registry: DatasetRegistry, schedule: PhaseSchedule, step: int,
                   seed: int, global_batch_size: int, dp_degree: int,
                   microbatch_size: int, capacity: int,
                   carryover: list[PackedSequence] | None = None,
                   samples_out: list[Sample] | None = None,
                   ) -> tuple[GlobalBatch, list[PackedSequence]]:
    """Draw, pack, and batch one step, carrying surplus sequences forward."""
    sequences = list(carryover or [])
    mean_len = np.mean([registry.get(n).mean_len
                        for n, r in schedule.recipe_at(step).entries if r > 0])
    id_base = step * 1_000_000
    draw = 0
    while len(sequences) < global_batch_size:
        need_tokens = (global_batch_size - len(sequences) + 1) * capacity
        n = max(int(need_tokens / mean_len) + 1, 16)
        chunk = sample_step(registry, schedule, step, n, seed + draw, id_base)
        id_base += n
        draw += 1
        if samples_out is not None:
            samples_out.extend(chunk)
        sequences.extend(hybrid_pack(chunk, capacity))
        if draw > 64:
            raise RuntimeError("packing failed to reach the global batch size")
    return build_global_batch(sequences, step, global_batch_size, dp_degree,
                              microbatch_size)


def export_batch(batch: GlobalBatch, samples: dict[int, Sample], path) -> None:
    """Line-delimited record dump of a packed batch, for inspection."""
    with open(path, "w") as fh:
        for i, seq in enumerate(batch.sequences):
            rec = {
                "schema_version": 1,
                "step": batch.step,
                "sequence": i,
                "fill": seq.fill,
                "capacity": seq.capacity,
                "spans": [
                    {"sample": sid, "tokens": tok,
                     "modality": samples[sid].modality.value if sid in samples else None}
                    for sid, tok in seq.spans
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
