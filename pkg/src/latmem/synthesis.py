"""Dual latent memory: construction and bank management.

Two banks share one unit shape (retrieval key + latent value matrix). The
perception bank is append-only and filled from multi-granularity visual
encodings before the first agent runs. The thinking bank holds
entropy-segmented reasoning chunks under a hard capacity: when an insertion
would overflow, units are partitioned into five quintiles by triggering rate,
weakly-relevant units in the top quintile are dropped, and weakly-relevant
units in the fourth quintile are fused into their most similar low-rate base
unit by the merging compressor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .agent import DecodeTrace, ProjectorParams, VisionEncoder, project
from .compressor import CompressorParams, compress, merge_values
from .errors import EmptyInputError, InvalidInputError, UndefinedSimilarityError

# Smallest bank that can be split into five quintiles.
MIN_MANAGED_CAPACITY = 5


class MemoryKind(Enum):
    PERCEPTION = "perception"
    THINKING = "thinking"


@dataclass
class MemoryUnit:
    """One retrievable memory: key vector, latent value matrix, usage stats."""

    key: np.ndarray
    value: np.ndarray
    kind: MemoryKind
    inserted_at: int = 0
    hit_count: int = 0

    def __post_init__(self):
        self.key = np.asarray(self.key, dtype=np.float64)
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.key.ndim != 1:
            raise InvalidInputError("key must be a vector")
        if self.value.ndim != 2 or self.value.shape[0] < 1:
            raise InvalidInputError("value must be a (l >= 1, d_model) matrix")
        if self.key.shape[0] != self.value.shape[1]:
            raise InvalidInputError("key dim must equal value width")


@dataclass
class MemoryBank:
    """Ordered unit store with a per-bank trigger counter.

    ``capacity`` is None for the unbounded perception bank; the thinking bank
    must set it to at least MIN_MANAGED_CAPACITY so quintile management is
    well defined.
    """

    kind: MemoryKind
    capacity: int | None = None
    units: list[MemoryUnit] = field(default_factory=list)
    global_trigger_count: int = 0

    def __post_init__(self):
        if self.capacity is not None and self.capacity < MIN_MANAGED_CAPACITY:
            raise InvalidInputError(f"capacity must be >= {MIN_MANAGED_CAPACITY} (or None), got {self.capacity}")

    def __len__(self) -> int:
        return len(self.units)


@dataclass(frozen=True)
class Chunk:
    """Contiguous half-open step span [start, end) with its hidden rows."""

    start: int
    end: int
    hidden: np.ndarray

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise InvalidInputError(f"bad span [{self.start}, {self.end})")
        h = np.asarray(self.hidden, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != self.end - self.start:
            raise InvalidInputError("hidden rows must match the span length")
        object.__setattr__(self, "hidden", h)


@dataclass(frozen=True)
class QuantilePartition:
    """Bank indices split into five sets, ascending by triggering rate."""

    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.sets) != 5:
            raise InvalidInputError("partition must have exactly five sets")


def make_key(value, key_compressor: CompressorParams) -> np.ndarray:
    """Distill a value matrix into its retrieval key (single compressed row)."""
    value = np.asarray(value, dtype=np.float64)
    if value.ndim != 2 or value.shape[0] == 0:
        raise EmptyInputError("value must be a nonempty matrix")
    return compress(value, key_compressor)[0]


def synthesize_perception(
    image,
    encoder: VisionEncoder,
    projector: ProjectorParams,
    key_compressor: CompressorParams,
) -> list[MemoryUnit]:
    """Build one perception unit per patch block of the image.

    Each block is downsampled to every granularity level, encoded, projected
    into the model space, and concatenated fine-to-coarse into the unit value.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InvalidInputError(f"image must be (H, W) or (H, W, C), got shape {arr.shape}")
    side = encoder.block_side
    h, w = arr.shape[0], arr.shape[1]
    if h % side or w % side:
        raise InvalidInputError(f"image dims {(h, w)} not divisible by patch-block side {side}")
    units = []
    for bi in range(h // side):
        for bj in range(w // side):
            block = arr[bi * side : (bi + 1) * side, bj * side : (bj + 1) * side]
            rows = []
            for level in range(encoder.granularity):
                down = kernels.bilinear_downsample(block, 2**level)
                encoded = encoder.encode(down, level)
                rows.extend(project(hrow, projector) for hrow in encoded)
            value = np.vstack(rows)
            units.append(MemoryUnit(key=make_key(value, key_compressor), value=value, kind=MemoryKind.PERCEPTION))
    return units


def boundary_prob(token_id: int, entropy_value: float, delimiters, vocab_size: int) -> float:
    """Cut probability at one step: 0 off-delimiters, clipped normalized entropy on them."""
    if entropy_value < 0.0:
        raise InvalidInputError("entropy must be >= 0")
    if token_id not in delimiters:
        return 0.0
    return float(np.clip(entropy_value / np.log(vocab_size), 0.0, 1.0))


def segment_trajectory(
    trace: DecodeTrace,
    delimiters,
    rng: np.random.Generator | None = None,
    threshold: float = 0.5,
) -> list[Chunk]:
    """Split a decode trace into chunks at sampled delimiter boundaries.

    With ``rng`` the cut after step i is Bernoulli in the boundary
    probability; without it the cut is deterministic at ``threshold``. The
    trailing remainder always forms the final chunk, so the spans partition
    the trace exactly.
    """
    if not trace.steps:
        raise EmptyInputError("cannot segment an empty trace")
    delimiters = frozenset(delimiters)
    chunks = []
    start = 0
    for i, step in enumerate(trace.steps):
        pi = boundary_prob(step.token_id, step.entropy, delimiters, trace.vocab_size)
        cut = (rng.random() < pi) if rng is not None else (pi >= threshold)
        if cut:
            chunks.append(_chunk_from(trace, start, i + 1))
            start = i + 1
    if start < len(trace.steps):
        chunks.append(_chunk_from(trace, start, len(trace.steps)))
    return chunks


def _chunk_from(trace: DecodeTrace, start: int, end: int) -> Chunk:
    return Chunk(start=start, end=end, hidden=np.stack([s.hidden for s in trace.steps[start:end]]))


def insert_thinking(
    bank: MemoryBank,
    chunks,
    key_compressor: CompressorParams,
    merge_compressor: CompressorParams,
) -> None:
    """Append chunks as thinking units, managing overflow before each insert."""
    if bank.kind is not MemoryKind.THINKING:
        raise InvalidInputError("insert_thinking requires a thinking bank")
    for chunk in chunks:
        if bank.capacity is not None and len(bank.units) + 1 > bank.capacity:
            manage_overflow(bank, merge_compressor, key_compressor)
        bank.units.append(
            MemoryUnit(
                key=make_key(chunk.hidden, key_compressor),
                value=chunk.hidden,
                kind=MemoryKind.THINKING,
                inserted_at=bank.global_trigger_count,
                hit_count=0,
            )
        )


def triggering_rate(bank: MemoryBank, unit: MemoryUnit) -> float:
    """Hits per system trigger since the unit entered the bank."""
    return unit.hit_count / max(1, bank.global_trigger_count - unit.inserted_at)


def global_similarity(bank: MemoryBank, index: int) -> float:
    """Mean cosine similarity of one unit's key to every other key."""
    m = len(bank.units)
    if m < 2:
        raise UndefinedSimilarityError(f"need at least 2 units, bank has {m}")
    if not 0 <= index < m:
        raise InvalidInputError(f"unit index {index} out of range")
    key = bank.units[index].key
    total = sum(kernels.cosine_sim(key, u.key) for j, u in enumerate(bank.units) if j != index)
    return total / (m - 1)


def partition_quantiles(bank: MemoryBank) -> QuantilePartition:
    """Split bank indices into five quintiles, ascending by triggering rate.

    Sizes differ by at most one, remainder going to the lowest sets; rate ties
    keep insertion (list) order.
    """
    m = len(bank.units)
    if m < MIN_MANAGED_CAPACITY:
        raise InvalidInputError(f"need at least {MIN_MANAGED_CAPACITY} units to partition, got {m}")
    order = sorted(range(m), key=lambda j: (triggering_rate(bank, bank.units[j]), j))
    base, rem = divmod(m, 5)
    sets = []
    pos = 0
    for s in range(5):
        size = base + (1 if s < rem else 0)
        sets.append(tuple(order[pos : pos + size]))
        pos += size
    return QuantilePartition(sets=tuple(sets))


def manage_overflow(
    bank: MemoryBank,
    merge_compressor: CompressorParams,
    key_compressor: CompressorParams,
) -> None:
    """Free space in a bank that has reached capacity.

    Deletes top-quintile units whose global similarity falls below the bank
    mean, then fuses below-mean fourth-quintile units into their most similar
    first-quintile base (one base may absorb several; merged bases are
    re-keyed and reinserted with fresh stats). If nothing qualifies, the
    single lowest-rate, oldest unit is evicted so the capacity bound always
    makes progress. No-op when the bank is below capacity, which makes the
    operation idempotent on its own output.
    """
    if bank.capacity is None or len(bank.units) < bank.capacity:
        return
    m = len(bank.units)
    sims = [global_similarity(bank, j) for j in range(m)]
    mean_sim = sum(sims) / m
    part = partition_quantiles(bank)
    set1, set4, set5 = part.sets[0], part.sets[3], part.sets[4]

    drop = {j for j in set5 if sims[j] < mean_sim}
    merge_groups: dict[int, list[int]] = {}
    for j in sorted(set4):
        if sims[j] < mean_sim:
            base = max(set1, key=lambda b: (kernels.cosine_sim(bank.units[j].key, bank.units[b].key), -b))
            merge_groups.setdefault(base, []).append(j)
            drop.add(j)

    merged_units = []
    for base in sorted(merge_groups):
        group = merge_groups[base]
        new_value = merge_values(bank.units[base].value, [bank.units[j].value for j in group], merge_compressor)
        merged_units.append(
            MemoryUnit(
                key=make_key(new_value, key_compressor),
                value=new_value,
                kind=bank.kind,
                inserted_at=bank.global_trigger_count,
                hit_count=0,
            )
        )
        drop.add(base)

    if not drop:
        # Uniform similarity: fall back to evicting the lowest-rate, oldest unit.
        drop.add(part.sets[0][0])

    bank.units = [u for j, u in enumerate(bank.units) if j not in drop]
    bank.units.extend(merged_units)


def record_trigger(bank: MemoryBank, hit_indices) -> None:
    """Count one retrieval event: bump the bank counter and each hit unit."""
    hit_indices = list(hit_indices)
    for j in hit_indices:
        if not 0 <= j < len(bank.units):
            raise InvalidInputError(f"hit index {j} out of range")
    bank.global_trigger_count += 1
    for j in hit_indices:
        bank.units[j].hit_count += 1
