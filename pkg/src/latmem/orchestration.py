"""Proactive memory orchestration.

Four stages run at decode time: a windowed entropy statistic decides *when*
to act, the recent hidden window is compressed into a retrieval query, a
gate routes the query to the perception or thinking bank, and the retrieved
values are refined to the preset injection length and spliced back into the
decode context.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .agent import DecodeTrace
from .compressor import CompressorParams, compress, refine_values
from .errors import InvalidInputError
from .synthesis import MemoryBank, MemoryKind, record_trigger

log = logging.getLogger("latmem")


@dataclass
class TriggerConfig:
    """Entropy-trigger knobs plus the mutable last-trigger position."""

    window: int = 16
    lambda_trig: float = 0.5
    i_last: int | None = None

    def __post_init__(self):
        if self.window < 2:
            raise InvalidInputError("window must be >= 2")
        if self.lambda_trig < 0:
            raise InvalidInputError("lambda_trig must be >= 0")
        if self.i_last is None:
            # Lets the first eligible step trigger.
            self.i_last = -self.window


@dataclass
class GateParams:
    """Mean-pool-then-affine routing gate with annealed sampling temperature."""

    w_g: np.ndarray
    b_g: float = 0.0
    tau0: float = 1.0
    tau_min: float = 0.1
    anneal_decay: float = 0.95
    step_e: int = 0

    def __post_init__(self):
        self.w_g = np.asarray(self.w_g, dtype=np.float64)
        if self.w_g.ndim != 1:
            raise InvalidInputError("w_g must be a vector")
        if not (0.0 < self.tau_min <= self.tau0):
            raise InvalidInputError("need 0 < tau_min <= tau0")
        if not (0.0 < self.anneal_decay < 1.0):
            raise InvalidInputError("anneal_decay must lie in (0, 1)")


def init_gate(d_model: int, seed: int, **kwargs) -> GateParams:
    rng = np.random.default_rng(seed)
    return GateParams(w_g=rng.normal(0.0, 1.0 / np.sqrt(d_model), d_model), **kwargs)


@dataclass(frozen=True)
class InjectionEvent:
    """One executed trigger: where, which bank, which units, what was injected."""

    step: int
    kind: MemoryKind
    unit_indices: tuple[int, ...]
    memory: np.ndarray


def window_stats(entropies, i: int, window: int) -> tuple[float, float] | None:
    """Population mean and stddev of the last ``window`` entropies, or None."""
    if i < window - 1 or i >= len(entropies):
        return None
    seg = np.asarray(entropies[i - window + 1 : i + 1], dtype=np.float64)
    return float(seg.mean()), float(seg.std())


def should_trigger(entropies, i: int, cfg: TriggerConfig) -> bool:
    """Fire iff the long-window entropy mean strictly exceeds mu + lambda*sigma
    of the short window, with at least one window length since the last fire.

    Needs full history for both windows, so never fires before step 2W-1.
    The caller owns the state update (set ``cfg.i_last = i`` on True).
    """
    w = cfg.window
    if i < 2 * w - 1:
        return False
    if i - cfg.i_last < w:
        return False
    stats = window_stats(entropies, i, w)
    if stats is None:
        return False
    mu, sigma = stats
    long_mean = float(np.asarray(entropies[i - 2 * w + 1 : i + 1], dtype=np.float64).mean())
    return long_mean > mu + cfg.lambda_trig * sigma


def attribute_window(trace: DecodeTrace, i: int, window: int, key_compressor: CompressorParams) -> np.ndarray:
    """Compress the recent hidden window into a retrieval query vector."""
    return compress(trace.hidden_window(i, window), key_compressor)[0]


def gate_logit(window_hiddens, gate: GateParams) -> float:
    """Routing logit: w_g . meanpool(rows) + b_g."""
    h = np.asarray(window_hiddens, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != gate.w_g.shape[0]:
        raise InvalidInputError(f"window must be (W, {gate.w_g.shape[0]}), got shape {h.shape}")
    return float(gate.w_g @ h.mean(axis=0) + gate.b_g)


def gumbel_sigmoid(a: float, tau: float, rng: np.random.Generator, clamp: float = 1e-12) -> float:
    """Relaxed binary sample: sigmoid((a + logistic noise) / tau)."""
    if not tau > 0.0:
        raise InvalidInputError("tau must be > 0")
    u = min(max(rng.random(), clamp), 1.0 - clamp)
    gamma = np.log(u) - np.log1p(-u)
    return float(kernels.sigmoid((a + gamma) / tau))


def anneal(gate: GateParams, e: int) -> float:
    """Temperature schedule max(tau_min, tau0 * decay^e)."""
    if e < 0:
        raise InvalidInputError("step index must be >= 0")
    return max(gate.tau_min, gate.tau0 * gate.anneal_decay**e)


def route(value: float, threshold: float = 0.5) -> MemoryKind:
    """Thinking iff value >= threshold (boundary inclusive), else perception."""
    return MemoryKind.THINKING if value >= threshold else MemoryKind.PERCEPTION


def retrieve_topk(bank: MemoryBank, query, k: int) -> list[int]:
    """Indices of the k most query-similar units, descending, ties to lower index."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    sims = [kernels.cosine_sim(query, u.key) for u in bank.units]
    order = sorted(range(len(sims)), key=lambda j: (-sims[j], j))
    return order[:k]


def execute_trigger(
    trace: DecodeTrace,
    i: int,
    banks: dict[MemoryKind, MemoryBank],
    key_compressor: CompressorParams,
    refine_compressor: CompressorParams,
    gate: GateParams,
    trigger_cfg: TriggerConfig,
    k: int,
    route_threshold: float = 0.5,
) -> InjectionEvent | None:
    """Run attribution, routing, retrieval, and refinement for a fired trigger.

    Inference-mode routing thresholds sigmoid(logit) with no noise. Returns
    None (and retrieves nothing) when the routed bank is empty.
    """
    window_hiddens = trace.hidden_window(i, trigger_cfg.window)
    query = attribute_window(trace, i, trigger_cfg.window, key_compressor)
    kind = route(kernels.sigmoid(gate_logit(window_hiddens, gate)), route_threshold)
    bank = banks[kind]
    if not bank.units:
        log.debug("trigger at step %d routed to empty %s bank; skipped", i, kind.value)
        return None
    indices = retrieve_topk(bank, query, k)
    record_trigger(bank, indices)
    memory = refine_values([bank.units[j].value for j in indices], refine_compressor)
    return InjectionEvent(step=i, kind=kind, unit_indices=tuple(indices), memory=memory)


class Orchestrator:
    """Per-turn decode hook wiring the trigger pipeline to a pair of banks."""

    def __init__(
        self,
        banks: dict[MemoryKind, MemoryBank],
        key_compressor: CompressorParams,
        refine_compressor: CompressorParams,
        gate: GateParams,
        trigger_cfg: TriggerConfig,
        k: int,
        route_threshold: float = 0.5,
    ):
        self.banks = banks
        self.key_compressor = key_compressor
        self.refine_compressor = refine_compressor
        self.gate = gate
        self.trigger_cfg = trigger_cfg
        self.k = k
        self.route_threshold = route_threshold
        self.trigger_counts = {MemoryKind.PERCEPTION: 0, MemoryKind.THINKING: 0}

    def on_step(self, trace: DecodeTrace, i: int) -> InjectionEvent | None:
        if not should_trigger(trace.entropies, i, self.trigger_cfg):
            return None
        self.trigger_cfg.i_last = i
        event = execute_trigger(
            trace,
            i,
            self.banks,
            self.key_compressor,
            self.refine_compressor,
            self.gate,
            self.trigger_cfg,
            self.k,
            self.route_threshold,
        )
        if event is not None:
            self.trigger_counts[event.kind] += 1
        return event
