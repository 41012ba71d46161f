"""Deterministic synthetic agent.

Stands in for a frozen vision-language backbone at desk scale. Logits come
from a seeded hash-mixing recurrence over (seed, step index, context digest),
decoding is greedy over the tempered softmax, and the per-step temperature
schedule shapes the entropy sequence. Injected latent memories are folded
into the context digest and the hidden-state recurrence, so everything after
an injection changes deterministically.

Also hosts the frozen vision encoder and the affine projector that maps
vision features into the model space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .seeding import fold_digest, mix_to_seed, split_seed

# Token ids below this bound form the delimiter set used for trajectory
# segmentation.
DELIMITER_ID_BOUND = 16


@dataclass(frozen=True)
class TokenBreakdown:
    """Per-turn token ledger."""

    prompt: int = 0
    visual: int = 0
    instruction: int = 0
    output: int = 0

    def __post_init__(self):
        for name in ("prompt", "visual", "instruction", "output"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} tokens must be >= 0")

    @property
    def total(self) -> int:
        return self.prompt + self.visual + self.instruction + self.output


@dataclass(frozen=True)
class AgentSpec:
    """Static description of one synthetic agent."""

    seed: int
    vocab_size: int = 1024
    d_model: int = 64
    d_v: int = 64
    output_len: int = 557
    # (phase length, decoding temperature) pairs, cycled over the turn.
    entropy_profile: tuple[tuple[int, float], ...] = ((48, 0.5), (48, 2.5))

    def __post_init__(self):
        if self.vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2")
        if self.output_len < 1:
            raise InvalidInputError("output_len must be >= 1")
        if self.d_model < 1 or self.d_v < 1:
            raise InvalidInputError("model dims must be >= 1")
        if not self.entropy_profile:
            raise InvalidInputError("entropy_profile must not be empty")
        profile = tuple((int(n), float(t)) for n, t in self.entropy_profile)
        for n, t in profile:
            if n < 1:
                raise InvalidInputError("phase lengths must be >= 1")
            if not t > 0.0:
                raise InvalidInputError("temperatures must be > 0")
        object.__setattr__(self, "entropy_profile", profile)

    def temperature_at(self, step: int) -> float:
        cycle = sum(n for n, _ in self.entropy_profile)
        pos = step % cycle
        for n, temp in self.entropy_profile:
            if pos < n:
                return temp
            pos -= n
        return self.entropy_profile[-1][1]


@dataclass
class DecodeStep:
    token_id: int
    entropy: float
    hidden: np.ndarray
    injected: tuple[str, int] | None = None


@dataclass
class DecodeTrace:
    """Record of one agent turn."""

    vocab_size: int
    steps: list[DecodeStep] = field(default_factory=list)
    injections: list = field(default_factory=list)
    tokens: TokenBreakdown | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def entropies(self) -> list[float]:
        return [s.entropy for s in self.steps]

    def hidden_window(self, i: int, window: int) -> np.ndarray:
        """Stack the hidden states of steps i-window+1 .. i."""
        if i < window - 1 or i >= len(self.steps):
            raise InvalidInputError(f"window [{i - window + 1}, {i}] not fully recorded")
        return np.stack([s.hidden for s in self.steps[i - window + 1 : i + 1]])


class SyntheticAgent:
    """Mutable decode state for one turn. Not reentrant; one thread at a time."""

    def __init__(self, spec: AgentSpec):
        self.spec = spec
        rng_embed = np.random.default_rng(split_seed(spec.seed, "embed"))
        scale = 1.0 / np.sqrt(spec.d_model)
        self._embed = rng_embed.normal(0.0, scale, (spec.vocab_size, spec.d_model))
        rng_rec = np.random.default_rng(split_seed(spec.seed, "recur"))
        self._w_hidden = rng_rec.normal(0.0, scale, (spec.d_model, spec.d_model))
        self._w_inject = rng_rec.normal(0.0, scale, (spec.d_model, spec.d_model))
        self._hidden = np.zeros(spec.d_model)
        self._digest = split_seed(spec.seed, "digest")

    def decode_step(self, step: int) -> tuple[int, np.ndarray, np.ndarray]:
        """Produce (token_id, logits, hidden) for one step; advances state."""
        rng = np.random.default_rng(mix_to_seed(self.spec.seed, step, self._digest))
        logits = rng.standard_normal(self.spec.vocab_size)
        token = int(np.argmax(logits))
        self._hidden = np.tanh(self._embed[token] + self._hidden @ self._w_hidden)
        self._digest = fold_digest(self._digest, token)
        return token, logits, self._hidden

    def inject(self, memory: np.ndarray) -> None:
        """Fold an injected latent memory into the decode context."""
        memory = np.asarray(memory, dtype=np.float64)
        if memory.ndim != 2 or memory.shape[1] != self.spec.d_model:
            raise InvalidInputError("injected memory must be (rows, d_model)")
        for row in memory:
            self._hidden = np.tanh(row @ self._w_inject + self._hidden @ self._w_hidden)
        self._digest = fold_digest(self._digest, mix_to_seed(*np.frombuffer(memory.tobytes(), dtype=np.uint64)))


def run_turn(
    spec: AgentSpec,
    *,
    prompt_tokens: int = 0,
    instruction_tokens: int = 0,
    visual_tokens: int = 0,
    hooks=None,
) -> DecodeTrace:
    """Decode one full turn, invoking orchestration hooks after every step.

    ``hooks`` may expose ``on_step(trace, i)`` returning an injection event
    (or None); the event's memory is folded into the decode context so later
    steps change deterministically. The token ledger gets the given counts;
    the caller is expected to rebuild it if injections add instruction tokens.
    """
    agent = SyntheticAgent(spec)
    trace = DecodeTrace(vocab_size=spec.vocab_size)
    for i in range(spec.output_len):
        token, logits, hidden = agent.decode_step(i)
        probs = kernels.softmax(logits, spec.temperature_at(i))
        trace.steps.append(DecodeStep(token_id=token, entropy=kernels.entropy(probs), hidden=hidden))
        if hooks is not None:
            event = hooks.on_step(trace, i)
            if event is not None:
                agent.inject(event.memory)
                trace.steps[i].injected = (event.kind.value, event.memory.shape[0])
                trace.injections.append(event)
    trace.tokens = TokenBreakdown(
        prompt=prompt_tokens,
        visual=visual_tokens,
        instruction=instruction_tokens,
        output=spec.output_len,
    )
    return trace


# --- vision encoding and projection ----------------------------------------


@dataclass(frozen=True)
class ProjectorParams:
    """Frozen affine map from vision space to model space: w_p @ h + b_p."""

    w_p: np.ndarray
    b_p: np.ndarray

    def __post_init__(self):
        w = np.array(self.w_p, dtype=np.float64)
        b = np.array(self.b_p, dtype=np.float64)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise InvalidInputError("projector must be (d_l, d_v) with a d_l bias")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InvalidInputError("projector weights must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "w_p", w)
        object.__setattr__(self, "b_p", b)


def init_projector(d_l: int, d_v: int, seed: int) -> ProjectorParams:
    rng = np.random.default_rng(seed)
    return ProjectorParams(
        w_p=rng.normal(0.0, 1.0 / np.sqrt(d_v), (d_l, d_v)),
        b_p=rng.normal(0.0, 0.02, d_l),
    )


def project(h, params: ProjectorParams) -> np.ndarray:
    """Map one vision hidden state into the model space."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (params.w_p.shape[1],):
        raise InvalidInputError(f"expected dim {params.w_p.shape[1]}, got shape {h.shape}")
    return params.w_p @ h + params.b_p


def encoding_length(g: int, level: int) -> int:
    """Tokens emitted for granularity ``level``: max(1, 2^(g - 2*level + 1))."""
    return max(1, 2 ** (g - 2 * level + 1)) if g - 2 * level + 1 >= 0 else 1


class VisionEncoder:
    """Frozen patch-pooling encoder.

    Splits a block into a grid of cells (one per output token), pools mean and
    standard deviation per channel in each cell, and applies a fixed seeded
    projection with tanh. Purely content-determined: identical blocks encode
    identically.
    """

    def __init__(self, d_v: int, patch_size: int, granularity: int, seed: int, channels: int = 1):
        if patch_size < 1 or granularity < 1:
            raise InvalidInputError("patch_size and granularity must be >= 1")
        self.d_v = d_v
        self.patch_size = patch_size
        self.granularity = granularity
        self.channels = channels
        rng = np.random.default_rng(seed)
        feat = 2 * channels
        self._w = rng.normal(0.0, 1.0 / np.sqrt(feat), (d_v, feat))
        self._b = rng.normal(0.0, 0.02, d_v)

    @property
    def block_side(self) -> int:
        return (2**self.granularity) * self.patch_size

    def encode(self, block, level: int) -> np.ndarray:
        """Encode a (downsampled) block at granularity ``level`` into l_i rows."""
        arr = np.asarray(block, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] != self.channels:
            raise InvalidInputError(f"block must have {self.channels} channels")
        if not 0 <= level < self.granularity:
            raise InvalidInputError(f"level must be in [0, {self.granularity})")
        expect = self.block_side // (2**level)
        if arr.shape[0] != expect or arr.shape[1] != expect:
            raise InvalidInputError(f"level-{level} block must be {expect}x{expect}, got {arr.shape[:2]}")
        n_tokens = encoding_length(self.granularity, level)
        m = n_tokens.bit_length() - 1
        rows_grid, cols_grid = 2 ** ((m + 1) // 2), 2 ** (m // 2)
        if expect % rows_grid or expect % cols_grid:
            raise InvalidInputError(f"block side {expect} not divisible into a {rows_grid}x{cols_grid} grid")
        ch, cw = expect // rows_grid, expect // cols_grid
        cells = arr.reshape(rows_grid, ch, cols_grid, cw, self.channels)
        means = cells.mean(axis=(1, 3)).reshape(n_tokens, self.channels)
        stds = cells.std(axis=(1, 3)).reshape(n_tokens, self.channels)
        feats = np.concatenate([means, stds], axis=1)
        return np.tanh(feats @ self._w.T + self._b)
