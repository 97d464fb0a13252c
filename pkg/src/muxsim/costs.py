"""Analytic FLOP, communication, and memory cost models.

All evaluators are pure functions of their inputs.  Simulated time is kept in
integer nanoseconds everywhere downstream; this module produces seconds as
floats and the engine quantizes once, at event-costing time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class ModelKind(str, Enum):
    ENCODER = "encoder"
    LLM = "llm"


class MemoryPolicy(str, Enum):
    KEEP = "keep"
    OFFLOAD = "offload"
    RECOMPUTE = "recompute"


# Collective volume factors: per-rank bytes on the wire = payload * factor.
# P2P moves the full payload; ring-style collectives move (g-1)/g of it.
_COLLECTIVES = ("all_gather", "all_to_all", "all_reduce", "reduce_scatter", "broadcast", "p2p")


@dataclass(frozen=True)
class ModelSpec:
    """Descriptor for one encoder or the LLM backbone."""

    name: str
    kind: ModelKind
    params: float
    layers: int
    hidden: int
    heads: int
    modality: str = ""
    tokens_per_patch: int = 588  # 3*14*14 pixels per visual token
    flops_multiplier: float = 1.0

    def __post_init__(self):
        if self.params <= 0:
            raise ValueError(f"model {self.name}: params must be positive")
        if self.layers < 1:
            raise ValueError(f"model {self.name}: layers must be >= 1")
        if self.hidden % max(self.heads, 1) != 0:
            raise ValueError(f"model {self.name}: heads must divide hidden")


@dataclass(frozen=True)
class LinkParams:
    latency_s: float  # alpha
    bytes_per_s: float  # 1/beta

    def __post_init__(self):
        if self.latency_s <= 0 or self.bytes_per_s <= 0:
            raise ValueError("link latency and bandwidth must be positive")


@dataclass(frozen=True)
class CommModel:
    """Alpha-beta link model with two link classes.

    Intra-node links must be at least as fast per byte as inter-node ones;
    defaults follow the usual ~4x NVLink/IB bandwidth gap.
    """

    intra: LinkParams = LinkParams(5e-6, 200e9)
    inter: LinkParams = LinkParams(10e-6, 50e9)
    primitive_overhead_s: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.intra.bytes_per_s < self.inter.bytes_per_s:
            raise ValueError("intra-node links must not be slower than inter-node links")
        for name in self.primitive_overhead_s:
            if name not in _COLLECTIVES:
                raise ValueError(f"unknown collective primitive {name!r}")


def volume_factor(primitive: str, group_size: int) -> float:
    if primitive not in _COLLECTIVES:
        raise ValueError(f"unknown collective primitive {primitive!r}")
    if primitive == "p2p":
        return 1.0
    g = max(group_size, 1)
    if g == 1:
        return 0.0
    return (g - 1) / g


def comm_time(model: CommModel, primitive: str, nbytes: int, group_size: int,
              intra_node: bool) -> float:
    """Seconds for one collective of `nbytes` per-rank payload over the group."""
    if nbytes < 0:
        raise ValueError("nbytes must be nonnegative")
    if group_size < 1:
        raise ValueError("group must be nonempty")
    factor = volume_factor(primitive, group_size)
    link = model.intra if intra_node else model.inter
    overhead = model.primitive_overhead_s.get(primitive, 0.0)
    return link.latency_s + overhead + nbytes * factor / link.bytes_per_s


def flops_forward(spec: ModelSpec, tokens: int, seq_len: int) -> float:
    """Forward FLOPs: 2*params*tokens dense plus the attention term.

    `seq_len` is the context each token attends within (the packed capacity
    for the LLM, the per-sample length for encoders).  The per-model
    multiplier absorbs work the dense accounting misses (patchify convs,
    USM's convolutional stack, kernel constants).
    """
    if tokens < 0:
        raise ValueError("tokens must be nonnegative")
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if tokens == 0:
        return 0.0
    dense = 2.0 * spec.params * tokens
    attention = 2.0 * spec.layers * spec.hidden * tokens * seq_len
    return (dense + attention) * spec.flops_multiplier


def flops_backward(spec: ModelSpec, tokens: int, seq_len: int) -> float:
    return 2.0 * flops_forward(spec, tokens, seq_len)


@dataclass(frozen=True)
class MemoryModel:
    bytes_per_param_state: float = 16.0  # param + grad + mixed-precision Adam states
    activation_coeff: float = 34.0  # activation bytes per token per layer, per hidden unit
    device_bytes: float = 80e9
    offload_bytes_per_s: float = 25e9  # D2H/H2D lane
    offload_latency_s: float = 10e-6
    dtype_bytes: int = 2

    def activation_bytes_per_token_layer(self, spec: ModelSpec) -> float:
        return self.activation_coeff * spec.hidden

    def resident_layers(self, spec: ModelSpec, policy: MemoryPolicy) -> int:
        # Keep: every layer's activations stay resident.  Offload keeps a
        # two-layer window (compute + transfer buffer).  Recompute keeps one.
        if policy == MemoryPolicy.KEEP:
            return spec.layers
        if policy == MemoryPolicy.OFFLOAD:
            return min(2, spec.layers)
        return 1


@dataclass(frozen=True)
class PeakMemoryResult:
    peak_bytes: float
    extra_flops: float  # recompute adds one forward
    transfer_bytes: float  # offload adds D2H + H2D traffic


def peak_memory(spec: ModelSpec, mem: MemoryModel,
                residency_timeline: list[tuple[int, int]],
                policy: MemoryPolicy,
                param_shards: int = 1) -> PeakMemoryResult:
    """Peak bytes for one model given a (time_ns, +/-token) residency timeline.

    Token deltas are per-rank resident activation tokens.  Negative residency
    at any instant is an internal invariant violation.
    """
    param_bytes = spec.params * mem.bytes_per_param_state / max(param_shards, 1)
    per_token = mem.activation_bytes_per_token_layer(spec) * mem.resident_layers(spec, policy)
    resident = 0
    peak_tokens = 0
    total_entered = 0
    for _, delta in sorted(residency_timeline, key=lambda td: td[0]):
        resident += delta
        if resident < 0:
            raise RuntimeError("negative activation residency")
        peak_tokens = max(peak_tokens, resident)
        if delta > 0:
            total_entered += delta
    extra_flops = 0.0
    transfer_bytes = 0.0
    full_per_token = mem.activation_bytes_per_token_layer(spec) * spec.layers
    if policy == MemoryPolicy.RECOMPUTE:
        # one extra forward (dense term) over every token that re-enters
        extra_flops = 2.0 * spec.params * total_entered * spec.flops_multiplier
    elif policy == MemoryPolicy.OFFLOAD:
        transfer_bytes = 2.0 * total_entered * full_per_token
    return PeakMemoryResult(param_bytes + peak_tokens * per_token, extra_flops, transfer_bytes)
