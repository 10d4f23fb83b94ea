"""Roofline-energy model: frequency vs. time-to-solution, power and energy-to-solution.

All frequencies are in MHz. Time is in seconds, power in watts, energy in joules.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .exceptions import ConfigError


class Regime(enum.Enum):
    COMPUTE_BOUND = "compute-bound"
    MEMORY_BOUND = "memory-bound"


@dataclass(frozen=True)
class SwitchCost:
    """Dead time and energy charged for one clock change."""

    latency: float = 0.0
    energy: float = 0.0

    def __post_init__(self):
        if self.latency < 0 or self.energy < 0:
            raise ValueError("switch latency and energy must be >= 0")

    @classmethod
    def from_latency(cls, latency, idle_power=0.0):
        """Cost whose energy is the dead time drawn at ``idle_power``."""
        return cls(latency=latency, energy=latency * idle_power)

    def to_dict(self):
        return {"latency": self.latency, "energy": self.energy}


CPU_SWITCH_LATENCY = 10e-6
GPU_SWITCH_LATENCY = 10e-3


@dataclass(frozen=True)
class MachineSpec:
    name: str
    freq_grid: tuple
    mem_freq: float
    compute_per_mhz: float
    bandwidth: float
    tdp: float
    switch_cost: SwitchCost = field(default_factory=SwitchCost)

    def __post_init__(self):
        grid = tuple(float(f) for f in self.freq_grid)
        object.__setattr__(self, "freq_grid", grid)
        if not grid:
            raise ValueError("freq_grid must be non-empty")
        if any(f <= 0 for f in grid):
            raise ValueError("freq_grid entries must be > 0")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("freq_grid must be strictly ascending")
        if self.compute_per_mhz <= 0 or self.bandwidth <= 0 or self.tdp <= 0:
            raise ValueError("compute_per_mhz, bandwidth and tdp must be > 0")

    @property
    def f_min(self):
        return self.freq_grid[0]

    @property
    def f_max(self):
        return self.freq_grid[-1]

    def compute_rate(self, f):
        return self.compute_per_mhz * f

    def to_dict(self):
        return {
            "name": self.name,
            "freq_grid": list(self.freq_grid),
            "mem_freq": self.mem_freq,
            "compute_per_mhz": self.compute_per_mhz,
            "bandwidth": self.bandwidth,
            "tdp": self.tdp,
            "switch_cost": self.switch_cost.to_dict(),
        }

    @classmethod
    def from_dict(cls, d, idle_power=0.0):
        """Build from a JSON mapping.

        A ``switch_cost`` without ``energy`` defaults to latency x ``idle_power``.
        """
        d = _require_mapping(d, "machine")
        sc = d.get("switch_cost") or {}
        latency = float(sc.get("latency", 0.0))
        energy = sc.get("energy")
        cost = SwitchCost(latency, latency * idle_power if energy is None else float(energy))
        try:
            return cls(
                name=str(d.get("name", "machine")),
                freq_grid=tuple(_get(d, "freq_grid", "machine")),
                mem_freq=float(d.get("mem_freq", 0.0)),
                compute_per_mhz=float(_get(d, "compute_per_mhz", "machine")),
                bandwidth=float(_get(d, "bandwidth", "machine")),
                tdp=float(_get(d, "tdp", "machine")),
                switch_cost=cost,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"machine: {exc}") from exc


@dataclass(frozen=True)
class KernelSpec:
    """Operation and byte counts of one kernel invocation."""

    name: str
    ops: float
    bytes: float

    def __post_init__(self):
        if self.ops < 0:
            raise ValueError("ops must be >= 0")
        if self.bytes <= 0:
            if self.ops == 0:
                raise ValueError(f"kernel {self.name!r} has neither ops nor bytes")
            raise ValueError("bytes must be > 0")

    @property
    def intensity(self):
        return self.ops / self.bytes


@dataclass(frozen=True)
class Superlinear:
    """Extra power ``a * exp(b * f)`` drawn at and above ``f_knee``."""

    a: float
    b: float
    f_knee: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("superlinear a and b must be > 0")

    def to_dict(self):
        return {"a_w": self.a, "b_per_mhz": self.b, "f_knee_mhz": self.f_knee}

    @classmethod
    def from_dict(cls, d):
        d = _require_mapping(d, "superlinear")
        return cls(
            a=float(_get(d, "a_w", "superlinear")),
            b=float(_get(d, "b_per_mhz", "superlinear")),
            f_knee=float(_get(d, "f_knee_mhz", "superlinear")),
        )


@dataclass(frozen=True)
class PowerModel:
    m: float
    p_static: float
    superlinear: Optional[Superlinear] = None

    def __post_init__(self):
        if self.m < 0 or self.p_static < 0:
            raise ValueError("m and p_static must be >= 0")

    def check_machine(self, machine):
        if self.superlinear is not None:
            fk = self.superlinear.f_knee
            if not machine.f_min <= fk <= machine.f_max:
                raise ValueError(
                    f"superlinear knee {fk} MHz outside grid range "
                    f"[{machine.f_min}, {machine.f_max}]"
                )

    def to_dict(self):
        return {
            "m_w_per_mhz": self.m,
            "p_static_w": self.p_static,
            "superlinear": None if self.superlinear is None else self.superlinear.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        d = _require_mapping(d, "power")
        sl = d.get("superlinear")
        try:
            return cls(
                m=float(_get(d, "m_w_per_mhz", "power")),
                p_static=float(_get(d, "p_static_w", "power")),
                superlinear=None if sl is None else Superlinear.from_dict(sl),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"power: {exc}") from exc


@dataclass(frozen=True)
class PerfModel:
    """Time per invocation ``(k / f) * max(1, alpha * f)``."""

    k: float
    alpha: float

    def __post_init__(self):
        if self.k <= 0 or self.alpha <= 0:
            raise ValueError("k and alpha must be > 0")

    @property
    def crossover(self):
        return 1.0 / self.alpha

    def to_dict(self):
        return {"k_s_mhz": self.k, "alpha_per_mhz": self.alpha}

    @classmethod
    def from_dict(cls, d):
        d = _require_mapping(d, "perf")
        try:
            return cls(
                k=float(_get(d, "k_s_mhz", "perf")),
                alpha=float(_get(d, "alpha_per_mhz", "perf")),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"perf: {exc}") from exc


def _require_mapping(d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    return d


def _get(d, key, where):
    try:
        return d[key]
    except KeyError:
        raise ConfigError(f"{where}: missing key {key!r}") from None


def _check_freq(f):
    if not f > 0:
        raise ValueError(f"frequency must be > 0, got {f!r}")


def machine_balance(machine: MachineSpec, f: float) -> float:
    """Compute-to-bandwidth ratio C(f)/B at clock ``f``."""
    _check_freq(f)
    return machine.compute_rate(f) / machine.bandwidth


def roofline_time(kernel: KernelSpec, machine: MachineSpec, f: float) -> float:
    """Roofline estimate ``max(ops / C(f), bytes / B)``.

    The branch is chosen with the same balance-vs-intensity test as
    :func:`classify_regime`, so the compute quotient is returned exactly
    whenever the kernel is classified compute-bound (ties included).
    """
    if classify_regime(kernel, machine, f) is Regime.COMPUTE_BOUND:
        return kernel.ops / machine.compute_rate(f)
    return kernel.bytes / machine.bandwidth


def classify_regime(kernel: KernelSpec, machine: MachineSpec, f: float) -> Regime:
    if machine_balance(machine, f) > kernel.intensity:
        return Regime.MEMORY_BOUND
    return Regime.COMPUTE_BOUND


def predict_time(perf: PerfModel, f: float) -> float:
    _check_freq(f)
    # the plateau returns k*alpha itself so every f above the knee gives bit-identical times
    if perf.alpha * f >= 1.0:
        return perf.k * perf.alpha
    return perf.k / f


def predict_power(pm: PowerModel, f: float) -> float:
    _check_freq(f)
    p = pm.m * f + pm.p_static
    sl = pm.superlinear
    if sl is not None and f >= sl.f_knee:
        p += sl.a * math.exp(sl.b * f)
    return p


def predict_energy(pm: PowerModel, perf: PerfModel, f: float) -> float:
    return predict_power(pm, f) * predict_time(perf, f)


def crossover_frequency(perf: PerfModel) -> float:
    return perf.crossover


def edp(e: float, t: float) -> float:
    if e < 0 or t < 0:
        raise ValueError("energy and time must be >= 0")
    return e * t


def energy_argmin(pm: PowerModel, perf: PerfModel, grid: Sequence[float]) -> float:
    """Grid frequency with the lowest predicted energy (lowest frequency on ties)."""
    best_f, best_e = None, math.inf
    for f in sorted(grid):
        e = predict_energy(pm, perf, f)
        if e < best_e:
            best_f, best_e = f, e
    return best_f


def params_to_dict(power: Optional[PowerModel] = None, perf: Optional[PerfModel] = None) -> dict:
    """Flat JSON document with the fixed parameter key names."""
    out = {}
    if power is not None:
        out.update(power.to_dict())
    if perf is not None:
        out.update(perf.to_dict())
    return out


def params_from_dict(d: dict):
    """Inverse of :func:`params_to_dict`; returns ``(power, perf)`` with ``None`` for absent halves."""
    d = _require_mapping(d, "params")
    power = PowerModel.from_dict(d) if "m_w_per_mhz" in d else None
    perf = PerfModel.from_dict(d) if "k_s_mhz" in d else None
    return power, perf


# K80 boost clocks and a bandwidth chosen so that M_b at 875 MHz is 8.08.
_K80_BANDWIDTH = 240e9
K80_LIKE = MachineSpec(
    name="k80-like",
    freq_grid=(562, 575, 588, 601, 614, 627, 640, 653, 666, 679, 692, 705, 718,
               732, 745, 758, 771, 784, 797, 810, 823, 836, 849, 862, 875),
    mem_freq=2505,
    compute_per_mhz=8.08 * _K80_BANDWIDTH / 875.0,
    bandwidth=_K80_BANDWIDTH,
    tdp=150.0,
    switch_cost=SwitchCost(latency=GPU_SWITCH_LATENCY),
)

# Haswell E5-2630v3 userspace P-states; balance 5.61 is reached at the 3.2 GHz turbo clock.
_HSW_BANDWIDTH = 68.3e9
HASWELL_LIKE = MachineSpec(
    name="haswell-like",
    freq_grid=tuple(range(1200, 2401, 100)),
    mem_freq=2133,
    compute_per_mhz=5.61 * _HSW_BANDWIDTH / 3200.0,
    bandwidth=_HSW_BANDWIDTH,
    tdp=85.0,
    switch_cost=SwitchCost(latency=CPU_SWITCH_LATENCY),
)
