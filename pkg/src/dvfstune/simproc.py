"""Synthetic processor that turns per-kernel models and a phase schedule into a power trace.

Noise is drawn from ``numpy.random.RandomState(numpy.random.MT19937(seed))``
via ``standard_normal``. That pairing (SeedSequence-seeded Mersenne Twister
feeding the legacy polar Gaussian sampler) is covered by numpy's stream
compatibility guarantee, so a seed yields the same trace on every platform.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .exceptions import ConfigError
from .model import (
    MachineSpec,
    PerfModel,
    PowerModel,
    SwitchCost,
    predict_power,
    predict_time,
)
from .traces import Channel, ChannelData, Marker, MarkerKind, PowerTrace, SweepPoint, format_number

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Phase:
    kernel: str
    requested_freq: float
    iterations: int
    perf: PerfModel
    power: PowerModel

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"phase {self.kernel!r}: iterations must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    machine: MachineSpec
    sample_rate: float = 100.0
    noise_sigma: float = 2.0
    seed: int = 0
    idle_power: float = 0.0
    lead_s: float = 0.0    # idle before the first phase
    gap_s: float = 0.0     # idle between consecutive phases
    tail_s: float = 0.0    # idle after the last phase
    channel: Channel = Channel.DEVICE

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if self.noise_sigma < 0 or self.idle_power < 0:
            raise ValueError("noise_sigma and idle_power must be >= 0")
        if min(self.lead_s, self.gap_s, self.tail_s) < 0:
            raise ValueError("idle durations must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_dict(self):
        return {
            "machine": self.machine.to_dict(),
            "sample_rate": self.sample_rate,
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "idle_power": self.idle_power,
            "lead_s": self.lead_s,
            "gap_s": self.gap_s,
            "tail_s": self.tail_s,
            "channel": self.channel.value,
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("sim: expected an object")
        if "machine" not in d:
            raise ConfigError("sim: missing key 'machine'")
        idle = _num(d, "idle_power", 0.0)
        kwargs = {"machine": MachineSpec.from_dict(d["machine"], idle_power=idle), "idle_power": idle}
        for key in ("sample_rate", "noise_sigma", "lead_s", "gap_s", "tail_s"):
            if key in d:
                kwargs[key] = _num(d, key)
        if "seed" in d:
            seed = d["seed"]
            if not isinstance(seed, int) or isinstance(seed, bool):
                raise ConfigError(f"sim: key 'seed' must be an integer, got {seed!r}")
            kwargs["seed"] = seed
        if "channel" in d:
            try:
                kwargs["channel"] = Channel(d["channel"])
            except ValueError:
                raise ConfigError(f"sim: key 'channel' has unknown value {d['channel']!r}") from None
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"sim: unknown key {sorted(unknown)[0]!r}")
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"sim: {exc}") from exc


def _num(d, key, default=None):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"key {key!r} must be a number, got {v!r}")
    return float(v)


def effective_frequency(pm: PowerModel, requested: float, machine: MachineSpec) -> float:
    """Highest grid clock at or below ``requested`` whose predicted power fits the TDP.

    Falls back to the lowest grid clock (with a warning) when even that exceeds the TDP.
    """
    if requested not in machine.freq_grid:
        raise ValueError(f"{requested} MHz is not on the {machine.name} frequency grid")
    f, _ = _capped(pm, requested, machine)
    return f


def _capped(pm, requested, machine):
    for f in reversed(machine.freq_grid):
        if f <= requested and predict_power(pm, f) <= machine.tdp:
            return f, f != requested
    log.warning("no grid frequency keeps %s under TDP %s W; using %s MHz",
                machine.name, machine.tdp, machine.f_min)
    return machine.f_min, True


def switch_penalty(from_f: float, to_f: float, cost: SwitchCost):
    """Dead time and energy of changing the clock from ``from_f`` to ``to_f``."""
    if from_f == to_f:
        return 0.0, 0.0
    return cost.latency, cost.energy


@dataclass(frozen=True)
class _Span:
    start: float
    end: float
    power: float
    is_phase: bool


def timeline(phases: Sequence[Phase], cfg: SimConfig):
    """Lay out phases, switch dead time and idle gaps.

    Returns ``(spans, markers, capped)``, where ``spans`` cover ``[0, end]``.
    """
    machine = cfg.machine
    spans: List[_Span] = []
    markers: List[Marker] = []
    capped = {}
    t = 0.0

    def idle(duration, power):
        nonlocal t
        if duration > 0:
            spans.append(_Span(t, t + duration, power, False))
            t += duration

    idle(cfg.lead_s, cfg.idle_power)
    prev_f = None
    for i, ph in enumerate(phases):
        if ph.requested_freq not in machine.freq_grid:
            raise ValueError(f"phase {ph.kernel!r}: {ph.requested_freq} MHz is not on the grid")
        ph.power.check_machine(machine)
        if i:
            idle(cfg.gap_s, cfg.idle_power)
        if prev_f is not None:
            latency, energy = switch_penalty(prev_f, ph.requested_freq, machine.switch_cost)
            idle(latency, energy / latency if latency > 0 else cfg.idle_power)
        f_eff, was_capped = _capped(ph.power, ph.requested_freq, machine)
        if was_capped:
            capped[(ph.kernel, ph.requested_freq)] = f_eff
        duration = ph.iterations * predict_time(ph.perf, f_eff)
        begin = t
        t = begin + duration
        spans.append(_Span(begin, t, predict_power(ph.power, f_eff), True))
        markers.append(Marker(begin, ph.kernel, MarkerKind.BEGIN, ph.requested_freq))
        markers.append(Marker(t, ph.kernel, MarkerKind.END, ph.requested_freq))
        prev_f = ph.requested_freq
    idle(cfg.tail_s, cfg.idle_power)
    return spans, markers, capped


def simulate(phases: Sequence[Phase], cfg: SimConfig) -> PowerTrace:
    """Sampled power trace of ``phases`` run back to back on ``cfg.machine``."""
    spans, markers, capped = timeline(phases, cfg)
    end = spans[-1].end if spans else 0.0
    n = int(math.ceil(end * cfg.sample_rate))
    t = np.arange(n + 1, dtype=float) / cfg.sample_rate
    power = noiseless_power(spans, t, cfg.idle_power)
    if cfg.noise_sigma > 0:
        rng = np.random.RandomState(np.random.MT19937(cfg.seed))
        power = np.maximum(power + cfg.noise_sigma * rng.standard_normal(t.size), 0.0)
    meta = {"machine": cfg.machine.name, "seed": str(cfg.seed)}
    for (kernel, f), f_eff in sorted(capped.items()):
        meta[f"capped.{kernel}.{format_number(f)}"] = format_number(f_eff)
    return PowerTrace({cfg.channel: ChannelData(t, power)}, tuple(markers), cfg.sample_rate, meta)


def noiseless_power(spans, t, idle_power):
    """Power at each sample time.

    Spans are half-open ``[start, end)``, except that a sample landing exactly
    on a phase's end belongs to that phase unless another phase starts there.
    """
    if not spans:
        return np.full(t.shape, idle_power)
    starts = np.array([s.start for s in spans])
    ends = np.array([s.end for s in spans])
    levels = np.array([s.power for s in spans])
    phase = np.array([s.is_phase for s in spans])
    idx = np.searchsorted(starts, t, side="right") - 1
    idx = np.clip(idx, 0, len(spans) - 1)
    prev = np.maximum(idx - 1, 0)
    on_phase_end = (idx > 0) & phase[prev] & (t == ends[prev]) & ~phase[idx]
    idx = np.where(on_phase_end, prev, idx)
    past_end = t > ends[-1]
    out = levels[idx]
    out[past_end] = idle_power
    return out


def model_sweep(perf: PerfModel, power: PowerModel, freqs, iterations: int = 1) -> List[SweepPoint]:
    """Noise-free sweep rows straight from the models (no sampling, no capping)."""
    rows = []
    for f in sorted(freqs):
        t_s = iterations * predict_time(perf, f)
        p = predict_power(power, f)
        rows.append(SweepPoint(float(f), t_s, p * t_s, p))
    return rows
